//! Deterministic synthetic scenes and camera rigs for tests, benchmarks and
//! demos.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{CameraModel, Gaussian, SH_C0};

/// A random small anisotropic Gaussian around `center`.
pub fn random_gaussian(rng: &mut impl Rng, center: Vector3<f64>, spread: f64, size: f64) -> Gaussian {
    let mean = center + Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
    let mut g = Gaussian::isotropic(mean, size, rng.random_range(0.3..1.0), [rng.random(), rng.random(), rng.random()]);
    g.scale = Vector3::from_fn(|_, _| size * rng.random_range(0.3..1.5));
    g.rotation = UnitQuaternion::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
    );
    g
}

fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

/// Textured ground patch plus a few blob objects, roughly `size` meters
/// across, centred on the origin with +y up. Colors vary at several
/// spatial frequencies so coarse levels lose visible detail.
pub fn city_block(leaves: usize, size: f64, seed: u64) -> Vec<Gaussian> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size / 2.0;
    let ground = leaves * 3 / 5;
    let spacing = size / (ground as f64).sqrt();
    let mut out = Vec::with_capacity(leaves);
    let texture = |x: f64, z: f64| -> [f64; 3] {
        let a = (x * 1.7).sin() * (z * 1.3).cos();
        let b = ((x + z) * 4.1).sin();
        let c = ((x * 0.4).floor() + (z * 0.4).floor()).rem_euclid(2.0);
        [
            (0.45 + 0.3 * a + 0.15 * b).clamp(0.02, 0.98),
            (0.35 + 0.25 * c + 0.1 * b).clamp(0.02, 0.98),
            (0.5 - 0.3 * a + 0.1 * c).clamp(0.02, 0.98),
        ]
    };
    for _ in 0..ground {
        let x = rng.random_range(-half..half);
        let z = rng.random_range(-half..half);
        let mut g = Gaussian::isotropic(Vector3::new(x, rng.random_range(-0.02..0.02), z), 1.0, rng.random_range(0.6..1.0), [0.5; 3]);
        g.scale = Vector3::new(spacing * rng.random_range(0.3..0.5), spacing * 0.05, spacing * rng.random_range(0.3..0.5));
        g.rotation = UnitQuaternion::from_euler_angles(0.0, rng.random_range(-PI..PI), 0.0);
        g.sh[0] = rgb_to_dc(texture(x, z));
        out.push(g);
    }
    let objects = 6;
    let per = (leaves - ground) / objects;
    for o in 0..objects {
        let angle = 2.0 * PI * o as f64 / objects as f64 + rng.random_range(-0.3..0.3);
        let r = half * rng.random_range(0.2..0.6);
        let center = Vector3::new(r * angle.cos(), 0.0, r * angle.sin());
        let radius = size * rng.random_range(0.05..0.1);
        let tint = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let count = if o == objects - 1 { leaves - out.len() } else { per };
        for _ in 0..count {
            let dir: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let dir = dir.normalize();
            let p = center + Vector3::new(dir.x * radius, radius * (1.0 + dir.y), dir.z * radius);
            let mut g = Gaussian::isotropic(p, 1.0, rng.random_range(0.5..1.0), [0.5; 3]);
            let s = radius * 0.12;
            g.scale = Vector3::new(s * rng.random_range(0.3..1.0), s * rng.random_range(0.3..1.0), s * 0.1);
            g.rotation = UnitQuaternion::rotation_between(&Vector3::z(), &dir).unwrap_or_else(UnitQuaternion::identity);
            let stripe = ((p.y * 9.0).sin() * 0.5 + 0.5) * 0.4;
            g.sh[0] = rgb_to_dc(tint.map(|c| (c * (0.8 + stripe)).clamp(0.02, 0.98)));
            for k in 1..4 {
                for c in 0..3 {
                    g.sh[k][c] = rng.random_range(-0.05..0.05);
                }
            }
            out.push(g);
        }
    }
    out
}

/// `n` cameras on a horizontal circle looking at `target`, with +y up.
pub fn orbit(n: usize, target: Vector3<f64>, radius: f64, height: f64, focal: f64, resolution: [u32; 2], phase: f64) -> Vec<CameraModel> {
    (0..n)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / n as f64;
            let eye = target + Vector3::new(radius * a.cos(), height, radius * a.sin());
            CameraModel::look_at(eye, target, Vector3::y(), focal, resolution).expect("valid orbit camera")
        })
        .collect()
}

/// Random leaves in a box of side `extent`.
pub fn random_leaves(n: usize, extent: f64, seed: u64) -> Vec<Gaussian> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = extent / (n as f64).cbrt() * 0.3;
    (0..n)
        .map(|_| random_gaussian(&mut rng, Vector3::zeros(), extent / 2.0, size))
        .collect()
}
