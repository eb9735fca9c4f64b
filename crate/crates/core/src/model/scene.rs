use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Aabb;

/// One SfM point seen in one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfmObservation {
    pub point: u32,
    /// Pixel coordinates (u, v).
    pub pixel: [f64; 2],
    pub inverse_depth: f64,
    pub reprojection_error: f64,
}

/// Sparse reconstruction: point positions plus per-image observations.
/// Image ids are camera ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SfmPointSet {
    pub positions: Vec<Vector3<f64>>,
    pub observations: BTreeMap<u32, Vec<SfmObservation>>,
}

impl SfmPointSet {
    pub fn observations_of(&self, image: u32) -> &[SfmObservation] {
        self.observations.get(&image).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestChunk {
    pub grid: [i32; 2],
    pub bounds: Aabb,
    pub camera_ids: Vec<u32>,
    /// Per-chunk hierarchy file, relative to the manifest.
    pub hierarchy: PathBuf,
    /// Per-chunk leaf splat file (trained chunk output), relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splats: Option<PathBuf>,
}

/// Chunked scene description, written as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub chunk_size: f64,
    pub scene_diameter: f64,
    pub scene_center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaffold: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skybox: Option<PathBuf>,
    pub chunks: Vec<ManifestChunk>,
}
