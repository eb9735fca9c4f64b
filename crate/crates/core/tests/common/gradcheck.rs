use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splat_lod::render::{apply_exposure, Blend, Renderer, Splat};
use splat_lod::{CameraModel, Gaussian, Image};

fn fixture(rng: &mut ChaCha8Rng, transitions: bool) -> Vec<Splat> {
    (0..5)
        .map(|i| {
            let mut g = Gaussian::isotropic(
                Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(3.0..4.0)),
                1.0,
                rng.random_range(0.3..0.9),
                [0.5; 3],
            );
            g.scale = Vector3::new(rng.random_range(0.08..0.3), rng.random_range(0.08..0.3), rng.random_range(0.08..0.3));
            g.rotation = UnitQuaternion::from_euler_angles(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for k in 0..16 {
                for c in 0..3 {
                    g.sh[k][c] = rng.random_range(-0.4..0.4) / (1.0 + k as f64);
                }
            }
            let blend = if transitions && i % 2 == 1 {
                Blend::Transition {
                    t: rng.random_range(0.2..0.8),
                    parent_falloff: rng.random_range(0.4..1.2),
                    siblings: 2 + i % 3,
                }
            } else {
                Blend::Plain
            };
            Splat { gaussian: g, blend }
        })
        .collect()
}

fn camera() -> CameraModel {
    let mut cam = CameraModel::look_at(Vector3::new(0.1, -0.2, -0.5), Vector3::new(0.0, 0.0, 3.5), -Vector3::y(), 40.0, [32, 32]).unwrap();
    cam.exposure[(0, 0)] = 1.1;
    cam.exposure[(1, 2)] = 0.05;
    cam.exposure[(2, 3)] = -0.02;
    cam
}

fn loss(splats: &[Splat], cam: &CameraModel, weights: &Image) -> f64 {
    let mut r = Renderer::new(cam.clone());
    let out = r.forward(splats);
    let img = apply_exposure(&out.color, &cam.exposure);
    img.pixels.iter().zip(&weights.pixels).map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2]).sum()
}

fn close(a: f64, f: f64) -> bool {
    (a - f).abs() <= 0.02 * a.abs().max(f.abs()) + 1e-9
}

/// Perturb one scalar of a splat list.
type Param = Box<dyn Fn(&mut Vec<Splat>, f64)>;

fn params(splats: &[Splat]) -> Vec<(String, usize, Param)> {
    let mut out: Vec<(String, usize, Param)> = Vec::new();
    for i in 0..splats.len() {
        for a in 0..3 {
            out.push((format!("mean{a}"), i, Box::new(move |s, d| s[i].gaussian.mean[a] += d)));
            out.push((format!("scale{a}"), i, Box::new(move |s, d| s[i].gaussian.scale[a] += d)));
        }
        for a in 0..4 {
            out.push((
                format!("rot{a}"),
                i,
                Box::new(move |s, d| {
                    let mut q = s[i].gaussian.quat_wxyz();
                    q[a] += d;
                    let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
                    // keep the raw, unnormalised perturbation: the renderer normalises
                    s[i].gaussian.rotation = UnitQuaternion::new_unchecked(raw);
                }),
            ));
        }
        out.push(("falloff".into(), i, Box::new(move |s, d| s[i].gaussian.falloff += d)));
        for k in 0..16 {
            for c in 0..3 {
                out.push((format!("sh{k}.{c}"), i, Box::new(move |s, d| s[i].gaussian.sh[k][c] += d)));
            }
        }
        if matches!(splats[i].blend, Blend::Transition { .. }) {
            out.push((
                "t".into(),
                i,
                Box::new(move |s, d| {
                    if let Blend::Transition { t, .. } = &mut s[i].blend {
                        *t += d;
                    }
                }),
            ));
            out.push((
                "parent_falloff".into(),
                i,
                Box::new(move |s, d| {
                    if let Blend::Transition { parent_falloff, .. } = &mut s[i].blend {
                        *parent_falloff += d;
                    }
                }),
            ));
        }
    }
    out
}

fn analytic(name: &str, g: &splat_lod::render::SplatGradient) -> f64 {
    let idx = |s: &str| s.chars().last().unwrap().to_digit(10).unwrap() as usize;
    if let Some(rest) = name.strip_prefix("sh") {
        let (k, c) = rest.split_once('.').unwrap();
        return g.sh[k.parse::<usize>().unwrap()][c.parse::<usize>().unwrap()];
    }
    match name {
        "falloff" => g.falloff,
        "t" => g.t,
        "parent_falloff" => g.parent_falloff,
        n if n.starts_with("mean") => g.mean[idx(n)],
        n if n.starts_with("scale") => g.scale[idx(n)],
        n if n.starts_with("rot") => g.rotation[idx(n)],
        _ => unreachable!(),
    }
}

fn current(name: &str, s: &Splat) -> f64 {
    let g = &s.gaussian;
    let idx = |s: &str| s.chars().last().unwrap().to_digit(10).unwrap() as usize;
    if let Some(rest) = name.strip_prefix("sh") {
        let (k, c) = rest.split_once('.').unwrap();
        return g.sh[k.parse::<usize>().unwrap()][c.parse::<usize>().unwrap()];
    }
    match (name, s.blend) {
        ("falloff", _) => g.falloff,
        ("t", Blend::Transition { t, .. }) => t,
        ("parent_falloff", Blend::Transition { parent_falloff, .. }) => parent_falloff,
        (n, _) if n.starts_with("mean") => g.mean[idx(n)],
        (n, _) if n.starts_with("scale") => g.scale[idx(n)],
        (n, _) if n.starts_with("rot") => g.quat_wxyz()[idx(n)],
        _ => unreachable!(),
    }
}

/// Analytic vs central-difference gradients on the 5-splat fixture:
/// (matching coordinates, total coordinates, mismatches).
pub fn gradient_check(seed: u64, transitions: bool) -> (usize, usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = fixture(&mut rng, transitions);
    let cam = camera();
    let mut weights = Image::new(32, 32);
    for p in &mut weights.pixels {
        *p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    }
    let mut r = Renderer::new(cam.clone());
    r.forward(&splats);
    let grads = r.backward(&weights).unwrap();

    let mut total = 0;
    let mut good = 0;
    let mut bad = Vec::new();
    for (name, i, perturb) in params(&splats) {
        let h = 1e-4 * current(&name, &splats[i]).abs().max(1.0);
        let mut plus = splats.clone();
        perturb(&mut plus, h);
        let mut minus = splats.clone();
        perturb(&mut minus, -h);
        let fd = (loss(&plus, &cam, &weights) - loss(&minus, &cam, &weights)) / (2.0 * h);
        let a = analytic(&name, &grads.splats[i]);
        total += 1;
        if close(a, fd) {
            good += 1;
        } else {
            bad.push(format!("{i}:{name} analytic {a:.6e} fd {fd:.6e}"));
        }
    }
    for r_ in 0..3 {
        for c in 0..4 {
            let h = 1e-4;
            let mut plus = cam.clone();
            plus.exposure[(r_, c)] += h;
            let mut minus = cam.clone();
            minus.exposure[(r_, c)] -= h;
            let fd = (loss(&splats, &plus, &weights) - loss(&splats, &minus, &weights)) / (2.0 * h);
            total += 1;
            if close(grads.exposure[(r_, c)], fd) {
                good += 1;
            } else {
                bad.push(format!("E{r_}{c} analytic {:.6e} fd {fd:.6e}", grads.exposure[(r_, c)]));
            }
        }
    }
    (good, total, bad)
}

