use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::lod::NEAR_PLANE;
use crate::model::{CameraModel, Gaussian};
use crate::sh;

/// Low-pass dilation added to every projected covariance, in px^2.
pub const DILATION: f64 = 0.3;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSplat {
    pub mean2d: Vector2<f64>,
    /// Dilated covariance.
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// `sqrt(det(cov before dilation) / det(cov2d))`.
    pub alpha_scale: f64,
    /// View-space z of the mean.
    pub depth: f64,
    pub color: [f64; 3],
    /// Three standard deviations of the major axis, pixels.
    pub radius: f64,
    /// Covered pixel rectangle `[x0, y0, x1, y1)`.
    pub rect: [usize; 4],
    pub(crate) cam_point: Vector3<f64>,
    pub(crate) cov2d_pre: Matrix2<f64>,
    pub(crate) jw: Matrix2x3<f64>,
    pub(crate) view_dir: Vector3<f64>,
    pub(crate) view_dist: f64,
    pub(crate) color_active: [bool; 3],
}

impl ProjectedSplat {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.rect[0] && x < self.rect[2] && y >= self.rect[1] && y < self.rect[3]
    }
}

pub(crate) fn projection_jacobian(cam: &CameraModel, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let (fx, fy) = (cam.focal.x, cam.focal.y);
    let z = t.z;
    Matrix2x3::new(fx / z, 0.0, -fx * t.x / (z * z), 0.0, fy / z, -fy * t.y / (z * z))
}

/// Project `g` into `cam`; `None` when behind the near plane, degenerate, or
/// off screen.
pub fn project(g: &Gaussian, cam: &CameraModel) -> Option<ProjectedSplat> {
    let t = cam.to_camera(&g.mean);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let mean2d = Vector2::new(
        cam.focal.x * t.x / t.z + cam.principal.x,
        cam.focal.y * t.y / t.z + cam.principal.y,
    );
    let jw = projection_jacobian(cam, &t) * cam.rotation;
    let cov2d_pre = jw * g.covariance() * jw.transpose();
    let det_pre = cov2d_pre.determinant();
    if !(det_pre > 0.0) {
        return None;
    }
    let cov2d = cov2d_pre + Matrix2::identity() * DILATION;
    let det = cov2d.determinant();
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let alpha_scale = (det_pre / det).sqrt();

    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let lambda_max = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    let span = |m: f64, limit: usize| -> Option<(usize, usize)> {
        let lo = (m - radius - 0.5).ceil().max(0.0);
        let hi = (m + radius - 0.5).floor().min(limit as f64 - 1.0);
        (lo <= hi).then(|| (lo as usize, hi as usize + 1))
    };
    let (x0, x1) = span(mean2d.x, cam.width())?;
    let (y0, y1) = span(mean2d.y, cam.height())?;

    let offset = g.mean - cam.center();
    let view_dist = offset.norm();
    let view_dir = offset / view_dist;
    let raw = sh::eval(&g.sh, &view_dir);
    let color_active = raw.map(|v| v + 0.5 > 0.0);
    let color = raw.map(|v| (v + 0.5).max(0.0));
    Some(ProjectedSplat {
        mean2d,
        cov2d,
        conic,
        alpha_scale,
        depth: t.z,
        color,
        radius,
        rect: [x0, y0, x1, y1],
        cam_point: t,
        cov2d_pre,
        jw,
        view_dir,
        view_dist,
        color_active,
    })
}
