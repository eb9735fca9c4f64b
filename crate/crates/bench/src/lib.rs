//! Shared fixtures for the benchmarks.

use nalgebra::Vector3;
use splat_lod::synthetic::{city_block, orbit};
use splat_lod::{build_bvh, BuildConfig, CameraModel, Gaussian, Hierarchy};

pub fn scene(leaves: usize) -> (Vec<Gaussian>, Hierarchy) {
    let g = city_block(leaves, 16.0, 1);
    let h = build_bvh(&g, &BuildConfig::default()).expect("synthetic leaves are valid");
    (g, h)
}

pub fn camera(resolution: [u32; 2]) -> CameraModel {
    orbit(1, Vector3::new(0.0, 0.5, 0.0), 15.0, 7.0, 140.0, resolution, 0.4).remove(0)
}
