use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::build::BuildConfig;
use crate::model::{CameraModel, SceneManifest, SfmObservation, SfmPointSet};
use crate::refine::RefineConfig;

/// Camera as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CameraJson {
    #[serde(default)]
    id: u32,
    resolution: [u32; 2],
    focal: [f64; 2],
    principal: [f64; 2],
    /// Row-major `[R | t]`.
    world_to_camera: [f64; 12],
    /// Row-major 3x4 color transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exposure: Option<[f64; 12]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<f64>,
}

impl CameraJson {
    fn from_camera(id: u32, cam: &CameraModel, image: Option<PathBuf>, timestamp: Option<f64>) -> Self {
        let e = &cam.exposure;
        let exposure = (*e != Matrix3x4::identity()).then(|| std::array::from_fn(|i| e[(i / 4, i % 4)]));
        Self {
            id,
            resolution: cam.resolution,
            focal: [cam.focal.x, cam.focal.y],
            principal: [cam.principal.x, cam.principal.y],
            world_to_camera: cam.world_to_camera_rows(),
            exposure,
            image,
            timestamp,
        }
    }

    fn camera(&self) -> Result<CameraModel, IoError> {
        let mut cam = CameraModel::from_world_to_camera(
            Vector2::from(self.focal),
            Vector2::from(self.principal),
            self.resolution,
            &self.world_to_camera,
        )
        .map_err(|e| IoError::InvalidData(format!("camera {}: {e}", self.id)))?;
        if let Some(e) = self.exposure {
            cam.exposure = Matrix3x4::from_row_slice(&e);
        }
        Ok(cam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub camera: CameraModel,
    /// Ground-truth image, relative to the camera file.
    pub image: Option<PathBuf>,
}

/// Timed camera sequence; timestamps strictly increase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CameraPath {
    pub frames: Vec<(f64, CameraModel)>,
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<CameraRecord>, IoError> {
    let raw: Vec<CameraJson> = serde_json::from_str(&fs::read_to_string(path)?)?;
    raw.into_iter()
        .map(|c| {
            Ok(CameraRecord {
                id: c.id,
                camera: c.camera()?,
                image: c.image,
            })
        })
        .collect()
}

pub fn write_cameras(path: impl AsRef<Path>, cams: &[CameraRecord]) -> Result<(), IoError> {
    let raw: Vec<_> = cams
        .iter()
        .map(|c| CameraJson::from_camera(c.id, &c.camera, c.image.clone(), None))
        .collect();
    fs::write(path, serde_json::to_string_pretty(&raw)?)?;
    Ok(())
}

pub fn read_camera_path(path: impl AsRef<Path>) -> Result<CameraPath, IoError> {
    let raw: Vec<CameraJson> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut frames = Vec::with_capacity(raw.len());
    for (i, c) in raw.iter().enumerate() {
        let t = c.timestamp.unwrap_or(i as f64);
        if frames.last().is_some_and(|&(prev, _)| t <= prev) {
            return Err(IoError::InvalidData(format!("frame {i}: timestamp {t} does not increase")));
        }
        frames.push((t, c.camera()?));
    }
    Ok(CameraPath { frames })
}

pub fn write_camera_path(path: impl AsRef<Path>, p: &CameraPath) -> Result<(), IoError> {
    let raw: Vec<_> = p
        .frames
        .iter()
        .enumerate()
        .map(|(i, (t, c))| CameraJson::from_camera(i as u32, c, None, Some(*t)))
        .collect();
    fs::write(path, serde_json::to_string_pretty(&raw)?)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SceneManifest, IoError> {
    Ok(toml::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &SceneManifest) -> Result<(), IoError> {
    fs::write(path, toml::to_string_pretty(m)?)?;
    Ok(())
}

/// Tool configuration; every field is optional in the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub build: BuildConfig,
    pub refine: RefineConfig,
}

pub fn read_config(path: impl AsRef<Path>) -> Result<Config, IoError> {
    Ok(toml::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_config(path: impl AsRef<Path>, c: &Config) -> Result<(), IoError> {
    fs::write(path, toml::to_string_pretty(c)?)?;
    Ok(())
}

fn numbers<const N: usize>(line: &str, lineno: usize, file: &Path) -> Result<[f64; N], IoError> {
    let bad = || IoError::InvalidData(format!("{}:{}: expected {N} numbers", file.display(), lineno + 1));
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    vals.try_into().map_err(|_| bad())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Points: one `x y z` per line, indexed by order.
/// Observations: `image point u v inverse_depth reprojection_error` per line.
pub fn read_sfm(points: impl AsRef<Path>, observations: impl AsRef<Path>) -> Result<SfmPointSet, IoError> {
    let (points, observations) = (points.as_ref(), observations.as_ref());
    let mut set = SfmPointSet::default();
    for (i, line) in data_lines(&fs::read_to_string(points)?) {
        set.positions.push(Vector3::from(numbers::<3>(line, i, points)?));
    }
    for (i, line) in data_lines(&fs::read_to_string(observations)?) {
        let [image, point, u, v, inv, err] = numbers::<6>(line, i, observations)?;
        let bad = |m: &str| IoError::InvalidData(format!("{}:{}: {m}", observations.display(), i + 1));
        if image < 0.0 || image.fract() != 0.0 || point < 0.0 || point.fract() != 0.0 {
            return Err(bad("ids must be non-negative integers"));
        }
        if point as usize >= set.positions.len() {
            return Err(bad("unknown point id"));
        }
        if !(inv > 0.0) {
            return Err(bad("inverse depth must be positive"));
        }
        set.observations.entry(image as u32).or_default().push(SfmObservation {
            point: point as u32,
            pixel: [u, v],
            inverse_depth: inv,
            reprojection_error: err,
        });
    }
    Ok(set)
}

pub fn write_sfm(points: impl AsRef<Path>, observations: impl AsRef<Path>, set: &SfmPointSet) -> Result<(), IoError> {
    let mut s = String::from("# x y z\n");
    for p in &set.positions {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    fs::write(points, s)?;
    let mut s = String::from("# image point u v inverse_depth reprojection_error\n");
    for (img, obs) in &set.observations {
        for o in obs {
            writeln!(
                s,
                "{img} {} {} {} {} {}",
                o.point, o.pixel[0], o.pixel[1], o.inverse_depth, o.reprojection_error
            )
            .unwrap();
        }
    }
    fs::write(observations, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::orbit;

    #[test]
    fn camera_and_path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cams: Vec<_> = orbit(3, Vector3::zeros(), 5.0, 1.0, 100.0, [64, 48], 0.2)
            .into_iter()
            .enumerate()
            .map(|(i, camera)| CameraRecord { id: i as u32 + 7, camera, image: None })
            .collect();
        cams[1].camera.exposure[(0, 3)] = 0.1;
        cams[2].image = Some("img/2.png".into());
        let f = dir.path().join("cams.json");
        write_cameras(&f, &cams).unwrap();
        let back = read_cameras(&f).unwrap();
        for (a, b) in cams.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image, b.image);
            assert!((a.camera.rotation - b.camera.rotation).abs().max() < 1e-12);
            assert_eq!(a.camera.exposure, b.camera.exposure);
        }
        let path = CameraPath {
            frames: cams.iter().enumerate().map(|(i, c)| (i as f64 * 0.5, c.camera.clone())).collect(),
        };
        let f = dir.path().join("path.json");
        write_camera_path(&f, &path).unwrap();
        assert_eq!(read_camera_path(&f).unwrap().frames.len(), 3);
        let mut bad = path.clone();
        bad.frames[2].0 = 0.5;
        write_camera_path(&f, &bad).unwrap();
        assert!(matches!(read_camera_path(&f), Err(IoError::InvalidData(_))));
    }

    #[test]
    fn config_partial_file_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        fs::write(&f, "[refine]\nsteps = 7\n").unwrap();
        let c = read_config(&f).unwrap();
        assert_eq!(c.refine.steps, 7);
        assert_eq!(c.build, BuildConfig::default());
        write_config(&f, &c).unwrap();
        assert_eq!(read_config(&f).unwrap(), c);
    }

    #[test]
    fn sfm_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = SfmPointSet {
            positions: vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 0.0)],
            ..Default::default()
        };
        set.observations.insert(
            4,
            vec![SfmObservation { point: 1, pixel: [3.5, 9.25], inverse_depth: 0.25, reprojection_error: 0.5 }],
        );
        let (p, o) = (dir.path().join("p.txt"), dir.path().join("o.txt"));
        write_sfm(&p, &o, &set).unwrap();
        assert_eq!(read_sfm(&p, &o).unwrap(), set);
        fs::write(&o, "4 9 1 1 0.5 0\n").unwrap();
        assert!(read_sfm(&p, &o).is_err());
    }
}
