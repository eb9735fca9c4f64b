//! Level-of-detail hierarchies over 3D Gaussian splats.
//!
//! Leaves are trained splats; interior nodes are moment-matched merges of
//! their children. A per-view cut picks the coarsest nodes whose projected
//! size is below a pixel target and blends them smoothly with their parents.

pub mod bench;
pub mod build;
pub mod frame;
pub mod io;
pub mod lod;
pub mod math;
pub mod metrics;
pub mod merge;
pub mod model;
pub mod refine;
pub mod render;
pub mod scene;
pub mod sh;
pub mod synthetic;

pub use build::{build_bvh, compact, BuildConfig};
pub use frame::{Image, Plane};
pub use lod::{select_cut, GranularityQuery};
pub use model::*;
pub use render::{render, Renderer, Splat};
