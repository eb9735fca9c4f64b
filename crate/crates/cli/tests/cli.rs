use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::Vector3;
use splat_lod::io::{self, CameraPath, CameraRecord};
use splat_lod::render::render_gaussians;
use splat_lod::synthetic::{city_block, orbit};
use splat_lod::{SfmObservation, SfmPointSet};

fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_splat-lod"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let leaves = city_block(400, 6.0, 3);
    io::write_splats(dir.join("leaves.ply"), &leaves).unwrap();
    let cams = orbit(4, Vector3::new(0.0, 0.3, 0.0), 8.0, 3.0, 60.0, [64, 48], 0.0);
    let mut records = Vec::new();
    for (i, cam) in cams.into_iter().enumerate() {
        let name = format!("view{i}.png");
        io::write_png(dir.join(&name), &render_gaussians(&leaves, &cam).color).unwrap();
        records.push(CameraRecord { id: i as u32, camera: cam, image: Some(name.into()) });
    }
    io::write_cameras(dir.join("cams.json"), &records).unwrap();
    let path = CameraPath {
        frames: orbit(6, Vector3::zeros(), 8.0, 3.0, 60.0, [64, 48], 0.1)
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64, c))
            .collect(),
    };
    io::write_camera_path(dir.join("path.json"), &path).unwrap();
    Fixture { _tmp: tmp, dir }
}

#[test]
fn build_inspect_compact_render_bench() {
    let f = fixture();
    let d = &f.dir;
    run(d, &["build", "-i", "leaves.ply", "-o", "h.h3dg"]);
    let h = io::read_hierarchy(d.join("h.h3dg")).unwrap();
    assert_eq!(h.leaf_count(), 400);

    let stats = run(d, &["inspect", "h.h3dg", "--cameras", "cams.json", "--tau", "6"]);
    assert!(stats.contains("leaves       400"), "{stats}");
    assert_eq!(stats.lines().filter(|l| l.starts_with("camera")).count(), 4);

    run(d, &["compact", "-i", "h.h3dg", "-o", "c.h3dg", "--cameras", "cams.json", "--tau", "1"]);
    let c = io::read_hierarchy(d.join("c.h3dg")).unwrap();
    assert_eq!(c.leaf_count(), 400);
    assert!(c.len() <= h.len());

    run(d, &["render", "--hierarchy", "h.h3dg", "--cameras", "cams.json", "--camera", "2", "-o", "r.png", "--depth", "r.f32"]);
    let img = io::read_png(d.join("r.png")).unwrap();
    assert_eq!([img.width, img.height], [64, 48]);
    assert_eq!(io::read_planes(d.join("r.f32")).unwrap().len(), 2);

    run(d, &["bench", "--hierarchy", "h.h3dg", "--path", "path.json", "--tau", "6", "-o", "b.csv", "--threads", "2"]);
    let csv = fs::read_to_string(d.join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("frame,"));
}

#[test]
fn subcommands_are_deterministic() {
    let f = fixture();
    let d = &f.dir;
    run(d, &["build", "-i", "leaves.ply", "-o", "h.h3dg", "--threads", "1"]);
    run(d, &["build", "-i", "leaves.ply", "-o", "h2.h3dg", "--threads", "3"]);
    assert_eq!(fs::read(d.join("h.h3dg")).unwrap(), fs::read(d.join("h2.h3dg")).unwrap());

    fs::write(d.join("cfg.toml"), "[refine]\nsteps = 4\ntau_min = 2.0\ntau_max = 20.0\n").unwrap();
    for out in ["a.h3dg", "b.h3dg"] {
        run(d, &["refine", "-i", "h.h3dg", "-o", out, "--cameras", "cams.json", "--config", "cfg.toml", "--seed", "9"]);
    }
    let (a, b) = (fs::read(d.join("a.h3dg")).unwrap(), fs::read(d.join("b.h3dg")).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, fs::read(d.join("h.h3dg")).unwrap());

    for out in ["r1.png", "r2.png"] {
        run(d, &["render", "--hierarchy", "a.h3dg", "--cameras", "cams.json", "--tau", "4", "-o", out]);
    }
    assert_eq!(fs::read(d.join("r1.png")).unwrap(), fs::read(d.join("r2.png")).unwrap());
}

#[test]
fn chunk_then_consolidate() {
    let f = fixture();
    let d = &f.dir;
    // cameras at the corners of a 20 m square, one chunk each at 10 m
    let cams: Vec<CameraRecord> = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0), (20.0, 20.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, z))| CameraRecord {
            id: i as u32,
            camera: splat_lod::CameraModel::look_at(
                Vector3::new(x, 2.0, z),
                Vector3::new(10.0, 0.0, 10.0),
                -Vector3::y(),
                50.0,
                [32, 32],
            )
            .unwrap(),
            image: None,
        })
        .collect();
    io::write_cameras(d.join("grid.json"), &cams).unwrap();
    let sfm = SfmPointSet {
        positions: vec![Vector3::new(5.0, 0.0, 5.0), Vector3::new(15.0, 0.0, 15.0)],
        observations: [(0u32, vec![SfmObservation { point: 0, pixel: [1.0, 1.0], inverse_depth: 0.1, reprojection_error: 0.5 }])]
            .into_iter()
            .collect(),
    };
    io::write_sfm(d.join("points.txt"), d.join("obs.txt"), &sfm).unwrap();
    run(d, &["chunk", "--cameras", "grid.json", "--points", "points.txt", "--observations", "obs.txt", "--chunk-size", "10", "--skybox", "30", "-o", "scene.toml"]);
    let m = io::read_manifest(d.join("scene.toml")).unwrap();
    assert!(m.chunks.len() >= 2);
    assert!(d.join("skybox.ply").exists());

    for c in &m.chunks {
        let center = c.bounds.center();
        let leaves = city_block(60, 16.0, c.grid[0] as u64 * 7 + c.grid[1] as u64)
            .into_iter()
            .map(|mut g| {
                g.mean += Vector3::new(center.x, 0.0, center.z);
                g
            })
            .collect::<Vec<_>>();
        io::write_splats(d.join(c.splats.as_ref().unwrap()), &leaves).unwrap();
    }
    run(d, &["consolidate", "--manifest", "scene.toml", "-o", "all.h3dg"]);
    let h = io::read_hierarchy(d.join("all.h3dg")).unwrap();
    h.validate().unwrap();
    assert!(h.leaf_count() >= 30);
    assert!(h.leaf_count() < m.chunks.len() * 60 + 30);
    for c in &m.chunks {
        assert!(d.join(&c.hierarchy).exists());
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let f = fixture();
    fs::write(f.dir.join("junk.ply"), b"not a ply").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_splat-lod"))
        .current_dir(&f.dir)
        .args(["build", "-i", "junk.ply", "-o", "x.h3dg"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.ply"));
}
