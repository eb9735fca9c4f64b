use nalgebra::{Matrix3x4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splat_lod::lod::{granularity, select_cut, GranularityQuery};
use splat_lod::refine::{cut_loss_and_gradients, optimize_exposure, refine_hierarchy, sample_tau, NodeGradient, RefineConfig};
use splat_lod::render::{apply_exposure, render_gaussians};
use splat_lod::synthetic::{orbit, random_leaves};
use splat_lod::{build_bvh, BuildConfig, CameraModel, Gaussian, Hierarchy, Image};

fn views(h: &Hierarchy, cams: &[CameraModel]) -> Vec<Image> {
    let leaves: Vec<Gaussian> = h
        .leaves()
        .map(|l| {
            let mut g = h.nodes[l].gaussian.clone();
            g.sh[0][1] += 0.3;
            g
        })
        .collect();
    cams.iter().map(|c| render_gaussians(&leaves, c).color).collect()
}

#[test]
fn refinement_touches_only_interior_attributes() {
    let h = build_bvh(&random_leaves(150, 3.0, 2), &BuildConfig::default()).unwrap();
    let cams = orbit(4, Vector3::zeros(), 8.0, 2.0, 60.0, [48, 48], 0.1);
    let images = views(&h, &cams);
    let cfg = RefineConfig { steps: 12, tau_min: 2.0, tau_max: 24.0, ..Default::default() };
    let out = refine_hierarchy(&h, &cams, &images, &cfg).unwrap();
    let r = &out.hierarchy;
    assert!(r.validate().is_ok());
    assert_eq!(out.steps.len(), 12);
    let mut changed = 0;
    for (a, b) in h.nodes.iter().zip(&r.nodes) {
        assert_eq!((a.parent, a.children(), a.bounds), (b.parent, b.children(), b.bounds));
        assert!(b.gaussian.falloff >= 0.0);
        if a.is_leaf() {
            assert_eq!(a.gaussian, b.gaussian);
        } else if a.gaussian != b.gaussian {
            changed += 1;
        }
    }
    assert!(changed > 0);
    // same seed, same result
    assert_eq!(refine_hierarchy(&h, &cams, &images, &cfg).unwrap(), out);
}

#[test]
fn leaf_only_cuts_leave_everything_in_place() {
    let h = build_bvh(&random_leaves(120, 3.0, 5), &BuildConfig::default()).unwrap();
    let cams = orbit(3, Vector3::zeros(), 8.0, 2.0, 60.0, [40, 40], 0.0);
    let leaves: Vec<Gaussian> = h.leaves().map(|l| h.nodes[l].gaussian.clone()).collect();
    let images: Vec<Image> = cams.iter().map(|c| render_gaussians(&leaves, c).color).collect();
    let cfg = RefineConfig { steps: 10, tau_min: 1e-3, tau_max: 1e-3, ..Default::default() };
    let out = refine_hierarchy(&h, &cams, &images, &cfg).unwrap();
    for (a, b) in h.nodes.iter().zip(&out.hierarchy.nodes) {
        let d = flat(&a.gaussian).iter().zip(flat(&b.gaussian)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
    }
}

fn flat(g: &Gaussian) -> Vec<f64> {
    let mut v: Vec<f64> = g.mean.iter().chain(g.scale.iter()).copied().collect();
    v.extend(g.quat_wxyz());
    v.push(g.falloff);
    v.extend(g.sh.iter().flatten());
    v
}

fn unflat(v: &[f64]) -> Gaussian {
    let mut sh = [[0.0; 3]; 16];
    for (k, c) in sh.iter_mut().enumerate() {
        c.copy_from_slice(&v[11 + 3 * k..14 + 3 * k]);
    }
    Gaussian {
        mean: Vector3::new(v[0], v[1], v[2]),
        scale: Vector3::new(v[3], v[4], v[5]),
        rotation: UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[7], v[8], v[9])),
        falloff: v[10],
        sh,
    }
}

fn flat_grad(g: &NodeGradient) -> Vec<f64> {
    let mut v: Vec<f64> = g.mean.iter().chain(g.scale.iter()).copied().collect();
    v.extend(g.rotation);
    v.push(g.falloff);
    v.extend(g.sh.iter().flatten());
    v
}

#[test]
fn node_gradients_match_finite_differences_through_the_transition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut leaves = Vec::new();
    for x in [-0.35, 0.35] {
        let mut g = Gaussian::isotropic(Vector3::new(x, 0.05, 0.0), 0.25, 0.7, [rng.random(), rng.random(), rng.random()]);
        g.scale = Vector3::new(0.3, 0.2, 0.15);
        g.rotation = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.5);
        for k in 1..16 {
            for c in 0..3 {
                g.sh[k][c] = rng.random_range(-0.1..0.1);
            }
        }
        leaves.push(g);
    }
    let h = build_bvh(&leaves, &BuildConfig::default()).unwrap();
    assert_eq!(h.len(), 3);
    let cam = CameraModel::look_at(Vector3::new(0.2, 0.3, -4.0), Vector3::zeros(), Vector3::y(), 40.0, [32, 32]).unwrap();
    let (ep, ec) = (granularity(&h.nodes[0], &cam), granularity(&h.nodes[1], &cam).max(granularity(&h.nodes[2], &cam)));
    let tau = 0.5 * (ep + ec);
    let cut = select_cut(&h, &GranularityQuery { camera: cam.clone(), tau });
    assert_eq!(cut.len(), 2);
    assert!(cut.iter().all(|e| e.t > 0.05 && e.t < 0.95), "{cut:?}");
    let target = Image::filled(32, 32, [0.3, 0.5, 0.2]);
    let (_, _, grads) = cut_loss_and_gradients(&h, &cam, &target, tau);

    let loss_with = |node: usize, v: &[f64]| {
        let mut hh = h.clone();
        hh.nodes[node].gaussian = unflat(v);
        cut_loss_and_gradients(&hh, &cam, &target, tau).0
    };
    let (mut ok, mut total) = (0, 0);
    for node in 0..3 {
        let base = flat(&h.nodes[node].gaussian);
        let analytic = flat_grad(&grads[node]);
        for k in 0..base.len() {
            let step = 1e-4 * base[k].abs().max(1.0);
            let mut plus = base.clone();
            plus[k] += step;
            let mut minus = base.clone();
            minus[k] -= step;
            let fd = (loss_with(node, &plus) - loss_with(node, &minus)) / (2.0 * step);
            total += 1;
            if (fd - analytic[k]).abs() <= 0.02 * fd.abs().max(analytic[k].abs()) + 1e-9 {
                ok += 1;
            } else {
                eprintln!("node {node} coord {k}: fd {fd:e} analytic {:e}", analytic[k]);
            }
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total} coordinates match");
}

#[test]
fn sampled_tau_is_log_uniform() {
    let cfg = RefineConfig { tau_min: 3.0, tau_max: 48.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 20_000;
    let mut u: Vec<f64> = (0..n)
        .map(|_| {
            let t = sample_tau(rng.random::<f64>(), &cfg);
            assert!((3.0..=48.0).contains(&t));
            (t / 3.0).ln() / 16f64.ln()
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
        .fold(0.0, f64::max);
    // 99% critical value of the one-sample KS statistic
    assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn exposure_is_recovered() {
    let h = build_bvh(&random_leaves(300, 3.0, 8), &BuildConfig::default()).unwrap();
    let cams = orbit(2, Vector3::zeros(), 6.0, 1.0, 50.0, [40, 40], 0.0);
    let renders: Vec<Image> = cams
        .iter()
        .map(|c| render_gaussians(&h.leaves().map(|l| h.nodes[l].gaussian.clone()).collect::<Vec<_>>(), c).color)
        .collect();
    let truth = [
        Matrix3x4::new(1.08, 0.03, 0.0, 0.02, 0.0, 0.93, 0.04, -0.03, 0.02, 0.0, 1.05, 0.01),
        Matrix3x4::new(0.95, 0.0, 0.02, 0.03, 0.01, 1.06, 0.0, 0.0, 0.0, 0.02, 0.97, -0.02),
    ];
    let targets: Vec<Image> = renders.iter().zip(&truth).map(|(r, e)| apply_exposure(r, e)).collect();
    let got = optimize_exposure(&renders, &targets, 30_000);
    for (g, t) in got.iter().zip(&truth) {
        let rel = (g - t).norm() / t.norm();
        assert!(rel <= 0.02, "relative error {rel}\n{g}\n{t}");
    }
}
