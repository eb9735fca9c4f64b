//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is a plain value: constructors validate, and nothing holds
//! interior mutability, so all types are `Send + Sync` and cheap to share.

mod aabb;
mod camera;
mod gaussian;
mod hierarchy;
mod scene;

pub use aabb::Aabb;
pub use camera::{identity_exposure, CameraModel};
pub use gaussian::{sh_degree_coeffs, Gaussian, ShCoeffs, SH_C0, SH_COEFFS};
pub(crate) use gaussian::quat_from_wxyz;
pub use hierarchy::{CutEntry, Hierarchy, HierarchyNode, TreeNode};
pub use scene::{ManifestChunk, SceneManifest, SfmObservation, SfmPointSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("scale components must be > 0, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("rotation quaternion norm {0} is not within 1e-6 of 1")]
    RotationNotNormalized(f64),
    #[error("falloff must be >= 0, got {0}")]
    NegativeFalloff(f64),
    #[error("aabb min {min:?} exceeds max {max:?}")]
    InvertedAabb { min: [f64; 3], max: [f64; 3] },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),
}
