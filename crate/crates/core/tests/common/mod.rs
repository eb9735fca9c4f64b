#![allow(dead_code)]

pub mod gradcheck;

use nalgebra::Vector3;
use rand::Rng;
use splat_lod::{CameraModel, Hierarchy};

/// Camera on a sphere of radius `dist` around `target`, looking at it.
pub fn random_camera(rng: &mut impl Rng, target: Vector3<f64>, dist: f64, res: [u32; 2]) -> CameraModel {
    loop {
        let d = Vector3::<f64>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = d.norm();
        if !(0.2..=1.0).contains(&n) || (d.y / n).abs() > 0.95 {
            continue;
        }
        let focal = rng.random_range(0.5..1.5) * res[0] as f64;
        return CameraModel::look_at(target + d / n * dist, target, Vector3::y(), focal, res).unwrap();
    }
}

/// Recursive descent from the root: stop at leaves and at nodes fine enough.
pub fn naive_cut(h: &Hierarchy, cam: &CameraModel, tau: f64) -> Vec<usize> {
    fn visit(h: &Hierarchy, cam: &CameraModel, tau: f64, n: usize, out: &mut Vec<usize>) {
        let node = &h.nodes[n];
        if node.is_leaf() || splat_lod::lod::granularity(node, cam) <= tau {
            out.push(n);
        } else {
            for c in node.children() {
                visit(h, cam, tau, c, out);
            }
        }
    }
    let mut out = Vec::new();
    visit(h, cam, tau, 0, &mut out);
    out.sort_unstable();
    out
}

/// True when the covered-leaf sets of `cut` partition the leaves.
pub fn partitions_leaves(h: &Hierarchy, cut: &[usize]) -> bool {
    let mut hits = vec![0u32; h.len()];
    for &n in cut {
        for l in h.covered_leaves(n) {
            hits[l] += 1;
        }
    }
    h.leaves().all(|l| hits[l] == 1)
}

pub fn frobenius(a: &nalgebra::Matrix3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
