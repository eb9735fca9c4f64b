use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::math;

/// Number of SH coefficients per channel (degree 3).
pub const SH_COEFFS: usize = 16;

/// Band-0 SH constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Degree-3 SH, indexed `[coefficient][channel]`.
pub type ShCoeffs = [[f64; 3]; SH_COEFFS];

/// Coefficients per channel for an SH degree.
pub fn sh_degree_coeffs(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// A single splat primitive.
///
/// `falloff` is the opacity of a leaf, and the generalised "falloff" of a
/// merged interior node, which may exceed 1. It is stored unclamped; the
/// rasterizer clamps the resulting blend weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    /// Standard deviations along the local axes, meters.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub falloff: f64,
    pub sh: ShCoeffs,
}

impl Gaussian {
    pub fn new(
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        falloff: f64,
        sh: ShCoeffs,
    ) -> Result<Self, ModelError> {
        let g = Self {
            mean,
            scale,
            rotation,
            falloff,
            sh,
        };
        g.validate()?;
        Ok(g)
    }

    /// Isotropic Gaussian whose band-0 color evaluates to `rgb`.
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, falloff: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        sh[0] = dc_from_rgb(rgb);
        Self {
            mean,
            scale: Vector3::repeat(sigma),
            rotation: UnitQuaternion::identity(),
            falloff,
            sh,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.falloff.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::NonFinite("gaussian"));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(ModelError::NonPositiveScale(self.scale.into()));
        }
        let n = self.rotation.coords.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(ModelError::RotationNotNormalized(n));
        }
        if self.falloff < 0.0 {
            return Err(ModelError::NegativeFalloff(self.falloff));
        }
        Ok(())
    }

    /// Rotation as `[w, x, y, z]`.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        math::quat_to_matrix(self.quat_wxyz())
    }

    /// `R diag(scale^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// Replace the band-0 coefficients so the view-independent color is `rgb`.
    pub fn set_base_color(&mut self, rgb: [f64; 3]) {
        self.sh[0] = dc_from_rgb(rgb);
    }

    pub fn base_color(&self) -> [f64; 3] {
        let dc = self.sh[0];
        [
            SH_C0 * dc[0] + 0.5,
            SH_C0 * dc[1] + 0.5,
            SH_C0 * dc[2] + 0.5,
        ]
    }
}

/// Quaternion from `[w, x, y, z]`, normalised.
pub(crate) fn quat_from_wxyz(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn dc_from_rgb(rgb: [f64; 3]) -> [f64; 3] {
    [
        (rgb[0] - 0.5) / SH_C0,
        (rgb[1] - 0.5) / SH_C0,
        (rgb[2] - 0.5) / SH_C0,
    ]
}
