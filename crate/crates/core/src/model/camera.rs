use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Pinhole camera. Camera space is x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: Vector2<f64>,
    pub principal: Vector2<f64>,
    /// Width, height in pixels.
    pub resolution: [u32; 2],
    /// Rotation part of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation part of the world-to-camera transform.
    pub translation: Vector3<f64>,
    /// Affine color correction `E`, applied as `E [C | 1]^T`.
    pub exposure: Matrix3x4<f64>,
}

/// `[I | 0]`.
pub fn identity_exposure() -> Matrix3x4<f64> {
    Matrix3x4::identity()
}

impl CameraModel {
    pub fn new(
        focal: Vector2<f64>,
        principal: Vector2<f64>,
        resolution: [u32; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, ModelError> {
        let cam = Self {
            focal,
            principal,
            resolution,
            rotation,
            translation,
            exposure: identity_exposure(),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Build from a row-major 3x4 `[R | t]` world-to-camera matrix.
    pub fn from_world_to_camera(
        focal: Vector2<f64>,
        principal: Vector2<f64>,
        resolution: [u32; 2],
        rows: &[f64; 12],
    ) -> Result<Self, ModelError> {
        let rotation = Matrix3::new(
            rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10],
        );
        let translation = Vector3::new(rows[3], rows[7], rows[11]);
        Self::new(focal, principal, resolution, rotation, translation)
    }

    pub fn world_to_camera_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    /// The principal point is the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        resolution: [u32; 2],
    ) -> Result<Self, ModelError> {
        let z = (target - eye).normalize();
        let down = -up + z * up.dot(&z);
        if down.norm() < 1e-9 {
            return Err(ModelError::InvalidCamera("up is parallel to view direction".into()));
        }
        let y = down.normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            Vector2::new(focal, focal),
            Vector2::new(resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0),
            resolution,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.focal.x > 0.0 && self.focal.y > 0.0) {
            return Err(ModelError::InvalidCamera(format!(
                "focal must be > 0, got {:?}",
                self.focal
            )));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(ModelError::InvalidCamera("zero resolution".into()));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(ModelError::InvalidCamera(format!(
                "world-to-camera rotation is not orthonormal (deviation {ortho:e})"
            )));
        }
        if !self.translation.iter().chain(self.exposure.iter()).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("camera"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn max_focal(&self) -> f64 {
        self.focal.x.max(self.focal.y)
    }

    pub fn max_resolution(&self) -> u32 {
        self.resolution[0].max(self.resolution[1])
    }
}
