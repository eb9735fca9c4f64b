//! Per-node merge formulas.
//!
//! A parent Gaussian is the moment-matched fit of its children's weighted
//! mixture. Weights are proportional to each child's screen contribution,
//! approximated as `falloff * surface` of the child's ellipsoid. The parent's
//! falloff is the children's total contribution divided by the parent's own
//! surface, so it can exceed 1.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::model::{Gaussian, SH_COEFFS};

/// Exponent of the Thomsen surface approximation (max error about 1.06%).
pub const THOMSEN_P: f64 = 1.6075;

/// Floor added to a merged covariance whose smallest eigenvalue falls below it.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("no children to merge")]
    Empty,
    #[error("every child has zero merge weight")]
    AllZeroWeights,
    #[error("weights cover {weights} children but {children} were given")]
    WeightCountMismatch { weights: usize, children: usize },
    #[error("merged covariance is degenerate")]
    DegenerateCovariance,
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
}

/// Surface area of the ellipsoid with semi-axes `scale`, by Thomsen's formula.
pub fn ellipsoid_surface(scale: &Vector3<f64>) -> f64 {
    let p = THOMSEN_P;
    let (a, b, c) = (scale.x.powf(p), scale.y.powf(p), scale.z.powf(p));
    4.0 * std::f64::consts::PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights {
    /// `falloff_i * surface_i`.
    pub raw: Vec<f64>,
    /// `raw_i / sum(raw)`.
    pub normalized: Vec<f64>,
    pub surfaces: Vec<f64>,
}

impl MergeWeights {
    /// Equal weights with zero raw contribution; used when every child is
    /// transparent.
    pub fn uniform(children: &[Gaussian]) -> Self {
        let n = children.len();
        Self {
            raw: vec![0.0; n],
            normalized: vec![1.0 / n as f64; n],
            surfaces: children.iter().map(|g| ellipsoid_surface(&g.scale)).collect(),
        }
    }

    pub fn total_raw(&self) -> f64 {
        self.raw.iter().sum()
    }
}

pub fn merge_weights(children: &[Gaussian]) -> Result<MergeWeights, MergeError> {
    if children.is_empty() {
        return Err(MergeError::Empty);
    }
    let surfaces: Vec<f64> = children.iter().map(|g| ellipsoid_surface(&g.scale)).collect();
    let raw: Vec<f64> = children
        .iter()
        .zip(&surfaces)
        .map(|(g, s)| g.falloff * s)
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(MergeError::AllZeroWeights);
    }
    let normalized = raw.iter().map(|r| r / total).collect();
    Ok(MergeWeights {
        raw,
        normalized,
        surfaces,
    })
}

/// Moment-matched mean and covariance of the weighted mixture.
pub fn mixture_moments(children: &[Gaussian], weights: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
    let mean = children
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (g, w)| acc + *w * g.mean);
    let cov = children
        .iter()
        .zip(weights)
        .fold(Matrix3::zeros(), |acc, (g, w)| {
            let d = g.mean - mean;
            acc + *w * (g.covariance() + d * d.transpose())
        });
    (mean, 0.5 * (cov + cov.transpose()))
}

pub fn merge_gaussians(children: &[Gaussian], w: &MergeWeights) -> Result<Gaussian, MergeError> {
    if children.is_empty() {
        return Err(MergeError::Empty);
    }
    if w.normalized.len() != children.len() || w.raw.len() != children.len() {
        return Err(MergeError::WeightCountMismatch {
            weights: w.normalized.len(),
            children: children.len(),
        });
    }
    let (mean, mut cov) = mixture_moments(children, &w.normalized);
    let min_eig = cov.symmetric_eigenvalues().min();
    if !(min_eig >= COVARIANCE_FLOOR) {
        cov += Matrix3::identity() * COVARIANCE_FLOOR;
    }
    let (scale, rotation) =
        decompose_covariance(&cov).map_err(|_| MergeError::DegenerateCovariance)?;

    let mut sh = [[0.0; 3]; SH_COEFFS];
    for (g, wi) in children.iter().zip(&w.normalized) {
        for (acc, c) in sh.iter_mut().zip(&g.sh) {
            for ch in 0..3 {
                acc[ch] += wi * c[ch];
            }
        }
    }
    let falloff = w.total_raw() / ellipsoid_surface(&scale);
    Ok(Gaussian {
        mean,
        scale,
        rotation,
        falloff,
        sh,
    })
}

/// Merge with the builder's fallbacks: uniform weights when every child is
/// transparent. Never fails for valid children.
pub fn merge_node(children: &[Gaussian]) -> Gaussian {
    let w = merge_weights(children).unwrap_or_else(|_| MergeWeights::uniform(children));
    merge_gaussians(children, &w).expect("covariance regularised before decomposition")
}

/// Split an SPD matrix into standard deviations (descending) and a rotation.
pub fn decompose_covariance(
    cov: &Matrix3<f64>,
) -> Result<(Vector3<f64>, UnitQuaternion<f64>), MergeError> {
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(MergeError::NotSpd("non-finite entry".into()));
    }
    let magnitude = cov.abs().max().max(f64::MIN_POSITIVE);
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-8 * magnitude {
        return Err(MergeError::NotSpd(format!("asymmetry {asym:e}")));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector3::from_fn(|k, _| eig.eigenvalues[order[k]]);
    if values.z <= 0.0 {
        return Err(MergeError::NotSpd(format!("eigenvalue {:e}", values.z)));
    }
    let mut basis = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    if basis.determinant() < 0.0 {
        basis.set_column(2, &(-basis.column(2)));
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(basis));
    Ok((values.map(f64::sqrt), rotation))
}

/// The 24 proper signed permutation matrices, identity first.
pub fn axis_reinterpretations() -> [Matrix3<f64>; 24] {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = [Matrix3::identity(); 24];
    let mut n = 0;
    for perm in PERMS {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (col, &src) in perm.iter().enumerate() {
                let s = if signs & (1 << col) != 0 { -1.0 } else { 1.0 };
                m[(src, col)] = s;
            }
            if m.determinant() > 0.0 {
                out[n] = m;
                n += 1;
            }
        }
    }
    debug_assert_eq!(n, 24);
    out
}

/// Re-express `child` with the axis labelling whose rotation is closest to
/// `parent`. The represented covariance does not change.
pub fn match_orientation(child: &Gaussian, parent: &UnitQuaternion<f64>) -> Gaussian {
    let r = child.rotation_matrix();
    let mut best = 0;
    let mut best_dot = -1.0;
    let mut best_q = child.rotation;
    let mut best_perm = Matrix3::identity();
    for (i, p) in axis_reinterpretations().iter().enumerate() {
        let q = if i == 0 {
            child.rotation
        } else {
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r * p))
        };
        let dot = q.coords.dot(&parent.coords).abs();
        if dot > best_dot + 1e-12 {
            best = i;
            best_dot = dot;
            best_q = q;
            best_perm = *p;
        }
    }
    if best == 0 {
        return child.clone();
    }
    if best_q.coords.dot(&parent.coords) < 0.0 {
        best_q = UnitQuaternion::new_unchecked(-best_q.into_inner());
    }
    // column j of the permutation selects source axis `src` for new axis j
    let mut scale = Vector3::zeros();
    for j in 0..3 {
        let src = (0..3).find(|&k| best_perm[(k, j)] != 0.0).expect("permutation column");
        scale[j] = child.scale[src];
    }
    Gaussian {
        scale,
        rotation: best_q,
        ..child.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn blob(mean: [f64; 3], scale: [f64; 3], falloff: f64) -> Gaussian {
        let mut g = Gaussian::isotropic(Vector3::from(mean), 1.0, falloff, [0.5; 3]);
        g.scale = Vector3::from(scale);
        g
    }

    /// Surface of an ellipsoid by midpoint quadrature over (theta, phi).
    fn surface_quadrature(a: f64, b: f64, c: f64) -> f64 {
        let n = 1500;
        let (dt, dp) = (PI / n as f64, 2.0 * PI / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) * dt;
            for j in 0..n {
                let p = (j as f64 + 0.5) * dp;
                let rt = Vector3::new(a * t.cos() * p.cos(), b * t.cos() * p.sin(), -c * t.sin());
                let rp = Vector3::new(-a * t.sin() * p.sin(), b * t.sin() * p.cos(), 0.0);
                total += rt.cross(&rp).norm() * dt * dp;
            }
        }
        total
    }

    #[test]
    fn surface_of_spheres_and_oblate_ellipsoid() {
        assert_relative_eq!(ellipsoid_surface(&Vector3::repeat(1.0)), 4.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(ellipsoid_surface(&Vector3::repeat(2.0)), 16.0 * PI, epsilon = 1e-12);
        let oracle = surface_quadrature(1.0, 1.0, 0.5);
        let approx = ellipsoid_surface(&Vector3::new(1.0, 1.0, 0.5));
        assert!((approx - oracle).abs() / oracle < 0.002, "{approx} vs {oracle}");
    }

    #[test]
    fn weights_examples() {
        let w = merge_weights(&[blob([0.0; 3], [1.0; 3], 1.0), blob([1.0; 3], [1.0; 3], 1.0)])
            .unwrap();
        assert_eq!(w.normalized, vec![0.5, 0.5]);
        let w = merge_weights(&[blob([0.0; 3], [1.0; 3], 1.0), blob([1.0; 3], [3.0; 3], 0.0)])
            .unwrap();
        assert_eq!(w.normalized, vec![1.0, 0.0]);
        // raw = (0.5 * 4pi, 0.25 * 16pi) = (2pi, 4pi)
        let w = merge_weights(&[blob([0.0; 3], [1.0; 3], 0.5), blob([1.0; 3], [2.0; 3], 0.25)])
            .unwrap();
        assert_relative_eq!(w.raw[0], 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(w.raw[1], 4.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(w.normalized[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(w.normalized[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_weights_error_and_fallback() {
        let kids = [blob([0.0; 3], [1.0; 3], 0.0), blob([2.0, 0.0, 0.0], [1.0; 3], 0.0)];
        assert_eq!(merge_weights(&kids), Err(MergeError::AllZeroWeights));
        let merged = merge_node(&kids);
        assert_eq!(merged.falloff, 0.0);
        assert_relative_eq!(merged.mean, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(merge_weights(&[]), Err(MergeError::Empty));
    }

    #[test]
    fn two_unit_gaussians_one_apart() {
        // hand evaluation: mean (1,0,0); cov = I + 0.5*(e1 e1^T) * 2 = diag(2,1,1)
        let kids = [blob([0.0; 3], [1.0; 3], 1.0), blob([2.0, 0.0, 0.0], [1.0; 3], 1.0)];
        let merged = merge_node(&kids);
        assert_relative_eq!(merged.mean, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(
            merged.covariance(),
            Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)),
            epsilon = 1e-9
        );
    }

    #[test]
    fn identical_children_merge_to_themselves() {
        let mut g = blob([0.3, -1.0, 2.0], [0.5, 0.2, 0.1], 0.6);
        g.rotation = UnitQuaternion::from_euler_angles(0.2, 0.4, -0.9);
        g.sh[3] = [0.1, -0.2, 0.3];
        let merged = merge_node(&[g.clone(), g.clone()]);
        assert_relative_eq!(merged.mean, g.mean, epsilon = 1e-12);
        assert_relative_eq!(merged.covariance(), g.covariance(), epsilon = 1e-9);
        assert_eq!(merged.sh[3], g.sh[3]);
        let single = merge_node(std::slice::from_ref(&g));
        assert_relative_eq!(single.covariance(), g.covariance(), epsilon = 1e-9);
        // contribution conservation for one child: falloff_p * S_p = o * S
        assert_relative_eq!(
            single.falloff * ellipsoid_surface(&single.scale),
            g.falloff * ellipsoid_surface(&g.scale),
            epsilon = 1e-9
        );
    }

    #[test]
    fn coplanar_children_are_regularised() {
        let mut a = blob([0.0; 3], [1.0, 1.0, 1e-9], 1.0);
        let mut b = blob([1.0, 0.0, 0.0], [1.0, 1.0, 1e-9], 1.0);
        a.scale.z = 1e-9;
        b.scale.z = 1e-9;
        let merged = merge_node(&[a, b]);
        merged.validate().unwrap();
        assert!(merged.scale.min() >= COVARIANCE_FLOOR.sqrt() * 0.99);
    }

    #[test]
    fn decompose_examples() {
        let (s, q) = decompose_covariance(&Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)))
            .unwrap();
        assert_relative_eq!(s, Vector3::new(2.0, 1.0, 1.0), epsilon = 1e-12);
        // first axis stays on x
        assert_relative_eq!((q * Vector3::x()).x.abs(), 1.0, epsilon = 1e-12);
        let (s, _) = decompose_covariance(&Matrix3::identity()).unwrap();
        assert_relative_eq!(s, Vector3::repeat(1.0), epsilon = 1e-12);

        let r = UnitQuaternion::from_euler_angles(1.0, -0.4, 2.2).to_rotation_matrix().into_inner();
        let cov = r * Matrix3::from_diagonal(&Vector3::new(9.0, 4.0, 1.0)) * r.transpose();
        let (s, q) = decompose_covariance(&cov).unwrap();
        assert_relative_eq!(s, Vector3::new(3.0, 2.0, 1.0), epsilon = 1e-9);
        let rq = q.to_rotation_matrix().into_inner();
        let back = rq * Matrix3::from_diagonal(&s.component_mul(&s)) * rq.transpose();
        assert!((back - cov).norm() / cov.norm() < 1e-6);

        let mut asym = Matrix3::identity();
        asym[(0, 1)] = 0.1;
        assert!(matches!(decompose_covariance(&asym), Err(MergeError::NotSpd(_))));
        let neg = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(decompose_covariance(&neg), Err(MergeError::NotSpd(_))));
    }

    #[test]
    fn orientation_matching_undoes_axis_swap() {
        let parent_rot = UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1);
        let mut child = blob([0.0; 3], [1.0, 2.0, 0.5], 1.0);
        child.rotation = parent_rot * UnitQuaternion::from_euler_angles(0.0, 0.0, PI / 2.0);
        let cov = child.covariance();
        let matched = match_orientation(&child, &parent_rot);
        assert_relative_eq!(matched.rotation.coords, parent_rot.coords, epsilon = 1e-9);
        assert_relative_eq!(matched.scale, Vector3::new(2.0, 1.0, 0.5), epsilon = 1e-12);
        assert_relative_eq!(matched.covariance(), cov, epsilon = 1e-9);

        let aligned = Gaussian {
            rotation: parent_rot,
            ..child.clone()
        };
        assert_eq!(match_orientation(&aligned, &parent_rot), aligned);
    }
}
