//! File formats: 3DGS point files, the binary hierarchy format, camera and
//! path JSON, manifest and config TOML, SfM text files, PNG and raw f32
//! image planes.

mod hierarchy_file;
mod ply;
mod raster;
mod text;

use thiserror::Error;

pub use hierarchy_file::{read_hierarchy, read_hierarchy_from, write_hierarchy, write_hierarchy_to, HIERARCHY_MAGIC, HIERARCHY_VERSION, NODE_RECORD_BYTES};
pub use ply::{read_splat_file, read_splats, read_splats_from, write_splat_file, write_splats, write_splats_to, ExtraProperties, PlyType, SplatFile};
pub use raster::{read_planes, read_png, write_planes, write_png};
pub use text::{
    read_camera_path, read_cameras, read_config, read_manifest, read_sfm, write_camera_path, write_cameras, write_config,
    write_manifest, write_sfm, CameraPath, CameraRecord, Config,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated record: {0}")]
    TruncatedRecord(String),
    #[error("unsupported SH layout: {0} f_rest properties")]
    UnsupportedShDegree(usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlRead(#[from] toml::de::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
