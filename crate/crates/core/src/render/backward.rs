use nalgebra::{Matrix2, Matrix3, Matrix3x4, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pixel_alpha, tile_rect, AlphaEval, Blend, ForwardState, ProjectedSplat, MAX_ALPHA, MIN_TRANSMITTANCE};
use crate::frame::Image;
use crate::math;
use crate::model::{CameraModel, Gaussian, ShCoeffs, SH_COEFFS};
use crate::sh;

/// Loss gradient with respect to one input splat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplatGradient {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// With respect to the raw `[w, x, y, z]` quaternion.
    pub rotation: [f64; 4],
    pub falloff: f64,
    /// Transition splats only.
    pub parent_falloff: f64,
    /// Transition splats only.
    pub t: f64,
    pub sh: ShCoeffs,
    /// Screen-space mean gradient.
    pub mean2d: Vector2<f64>,
}

impl Default for SplatGradient {
    fn default() -> Self {
        Self {
            mean: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: [0.0; 4],
            falloff: 0.0,
            parent_falloff: 0.0,
            t: 0.0,
            sh: [[0.0; 3]; SH_COEFFS],
            mean2d: Vector2::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderGradients {
    /// Index-aligned with the forward input; culled splats get zeros.
    pub splats: Vec<SplatGradient>,
    pub exposure: Matrix3x4<f64>,
}

/// Screen-space partials accumulated per splat.
#[derive(Debug, Clone, Copy)]
struct Local {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    alpha_scale: f64,
    falloff: f64,
    parent_falloff: f64,
    t: f64,
    color: [f64; 3],
}

impl Default for Local {
    fn default() -> Self {
        Self {
            mean2d: Vector2::zeros(),
            conic: Matrix2::zeros(),
            alpha_scale: 0.0,
            falloff: 0.0,
            parent_falloff: 0.0,
            t: 0.0,
            color: [0.0; 3],
        }
    }
}

impl Local {
    fn add(&mut self, o: &Local) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.alpha_scale += o.alpha_scale;
        self.falloff += o.falloff;
        self.parent_falloff += o.parent_falloff;
        self.t += o.t;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
    }
}

/// Chain `dL/dalpha` through the alpha expression into screen-space partials.
fn alpha_backward(a: &AlphaEval, p: &ProjectedSplat, falloff: f64, blend: &Blend, d_alpha: f64, out: &mut Local) {
    let s = p.alpha_scale;
    let f = falloff.max(0.0);
    let own_live = a.own <= MAX_ALPHA && falloff > 0.0;
    let (d_own, d_par, fp) = match *blend {
        Blend::Plain => (if own_live { 1.0 } else { 0.0 }, 0.0, 0.0),
        Blend::Transition {
            t,
            parent_falloff,
            siblings,
        } => {
            let k = siblings.max(1) as f64;
            let d_par = if a.parent <= MAX_ALPHA && parent_falloff > 0.0 {
                (1.0 - t) * (1.0 - a.parent).powf(1.0 / k - 1.0) / k
            } else {
                0.0
            };
            out.t += d_alpha * (a.own.min(MAX_ALPHA) - a.shared);
            (if own_live { t } else { 0.0 }, d_par, parent_falloff.max(0.0))
        }
    };
    let d_g = d_alpha * (d_own * f + d_par * fp) * s;
    out.alpha_scale += d_alpha * (d_own * f + d_par * fp) * a.g;
    out.falloff += d_alpha * d_own * s * a.g;
    out.parent_falloff += d_alpha * d_par * s * a.g;
    out.mean2d += d_g * a.g * (p.conic * a.d);
    out.conic += -0.5 * d_g * a.g * (a.d * a.d.transpose());
}

/// Per-tile screen-space partials, aligned with the tile's rank list.
fn tile_backward(state: &ForwardState, tile: usize, ranks: &[usize], d_color: &Image) -> Vec<Local> {
    let (w, h) = (d_color.width, d_color.height);
    let mut acc = vec![Local::default(); ranks.len()];
    let r = tile_rect(tile, state.tiles_x, w, h);
    let mut hits: Vec<(usize, AlphaEval, f64)> = Vec::new();
    for y in r[1]..r[3] {
        for x in r[0]..r[2] {
            hits.clear();
            let mut t = 1.0;
            for (pos, &rank) in ranks.iter().enumerate() {
                let i = state.order[rank];
                let p = state.projected[i].as_ref().expect("visible");
                if !p.covers(x, y) {
                    continue;
                }
                let s = &state.splats[i];
                let Some(a) = pixel_alpha(p, s.gaussian.falloff, &s.blend, x, y) else {
                    continue;
                };
                hits.push((pos, a, t));
                t *= 1.0 - a.alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            let g = d_color.get(x, y);
            let mut behind = [0.0; 3];
            for &(pos, a, t) in hits.iter().rev() {
                let i = state.order[ranks[pos]];
                let p = state.projected[i].as_ref().expect("visible");
                let s = &state.splats[i];
                let wgt = a.alpha * t;
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    acc[pos].color[c] += g[c] * wgt;
                    d_alpha += g[c] * (p.color[c] * t - behind[c] / (1.0 - a.alpha));
                    behind[c] += p.color[c] * wgt;
                }
                alpha_backward(&a, p, s.gaussian.falloff, &s.blend, d_alpha, &mut acc[pos]);
            }
        }
    }
    acc
}

/// Pull screen-space partials back to the Gaussian's parameters.
fn splat_backward(g: &Gaussian, p: &ProjectedSplat, cam: &CameraModel, l: &Local) -> SplatGradient {
    let mut out = SplatGradient {
        falloff: l.falloff,
        parent_falloff: l.parent_falloff,
        t: l.t,
        mean2d: l.mean2d,
        ..Default::default()
    };

    // conic and alpha scale -> 2D covariance before dilation
    let q = p.conic;
    let mut d_cov2d = -(q * l.conic * q);
    let pre_inv = p.cov2d_pre.try_inverse().unwrap_or_else(Matrix2::zeros);
    d_cov2d += l.alpha_scale * 0.5 * p.alpha_scale * (pre_inv - q);

    // 2D covariance -> projection matrix M = J W and 3D covariance
    let m = p.jw;
    let cov3 = g.covariance();
    let d_m = (d_cov2d + d_cov2d.transpose()) * m * cov3;
    let d_cov3: Matrix3<f64> = m.transpose() * d_cov2d * m;
    let d_j = d_m * cam.rotation.transpose();

    let t = p.cam_point;
    let (fx, fy) = (cam.focal.x, cam.focal.y);
    let (z, z2, z3) = (t.z, t.z * t.z, t.z * t.z * t.z);
    let mut d_t = Vector3::zeros();
    d_t.x += d_j[(0, 2)] * (-fx / z2) + l.mean2d.x * fx / z;
    d_t.y += d_j[(1, 2)] * (-fy / z2) + l.mean2d.y * fy / z;
    d_t.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(0, 2)] * (2.0 * fx * t.x / z3)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(1, 2)] * (2.0 * fy * t.y / z3)
        - l.mean2d.x * fx * t.x / z2
        - l.mean2d.y * fy * t.y / z2;
    out.mean = cam.rotation.transpose() * d_t;

    // color -> SH coefficients and view direction
    let basis = sh::basis(&p.view_dir);
    let jac = sh::basis_jacobian(&p.view_dir);
    let mut d_dir = Vector3::zeros();
    for c in 0..3 {
        if !p.color_active[c] || l.color[c] == 0.0 {
            continue;
        }
        for k in 0..SH_COEFFS {
            out.sh[k][c] = basis[k] * l.color[c];
            d_dir += jac[k] * (g.sh[k][c] * l.color[c]);
        }
    }
    out.mean += (d_dir - p.view_dir * p.view_dir.dot(&d_dir)) / p.view_dist;

    // 3D covariance = L L^T with L = R diag(scale)
    let r = g.rotation_matrix();
    let lm = r * Matrix3::from_diagonal(&g.scale);
    let d_l = (d_cov3 + d_cov3.transpose()) * lm;
    let mut d_r = Matrix3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            d_r[(i, k)] = d_l[(i, k)] * g.scale[k];
            out.scale[k] += d_l[(i, k)] * r[(i, k)];
        }
    }
    out.rotation = math::quat_to_matrix_backward(g.quat_wxyz(), &d_r);
    out
}

pub(super) fn backward(state: &ForwardState, cam: &CameraModel, grad: &Image) -> RenderGradients {
    let e = cam.exposure;
    let e3 = e.fixed_view::<3, 3>(0, 0).into_owned();
    let mut d_exposure = Matrix3x4::zeros();
    let mut d_color = Image::new(grad.width, grad.height);
    for (idx, (g, c)) in grad.pixels.iter().zip(&state.color.pixels).enumerate() {
        let gv = Vector3::from(*g);
        let ext = [c[0], c[1], c[2], 1.0];
        for r in 0..3 {
            for k in 0..4 {
                d_exposure[(r, k)] += gv[r] * ext[k];
            }
        }
        d_color.pixels[idx] = (e3.transpose() * gv).into();
    }

    let per_tile: Vec<Vec<Local>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, ranks)| tile_backward(state, tile, ranks, &d_color))
        .collect();
    let mut locals = vec![Local::default(); state.splats.len()];
    for (ranks, acc) in state.tiles.iter().zip(&per_tile) {
        for (rank, l) in ranks.iter().zip(acc) {
            locals[state.order[*rank]].add(l);
        }
    }

    let splats = state
        .splats
        .par_iter()
        .zip(&state.projected)
        .zip(&locals)
        .map(|((s, p), l)| match p {
            Some(p) => splat_backward(&s.gaussian, p, cam, l),
            None => SplatGradient::default(),
        })
        .collect();
    RenderGradients {
        splats,
        exposure: d_exposure,
    }
}
