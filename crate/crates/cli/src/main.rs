use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use splat_lod::bench::bench_path;
use splat_lod::build::default_tau_max;
use splat_lod::io::{self, CameraRecord, Config};
use splat_lod::lod::{cut_splats, select_cut, GranularityQuery};
use splat_lod::refine::refine_hierarchy;
use splat_lod::render::{apply_exposure, render};
use splat_lod::scene::{assemble_chunk_leaves, consolidate, make_grid, make_skybox, ChunkSpec};
use splat_lod::{build_bvh, compact, Aabb, CameraModel, Hierarchy, ManifestChunk, SceneManifest};

#[derive(Parser)]
#[command(name = "splat-lod", version, about = "Level-of-detail hierarchies for Gaussian splats")]
struct Cli {
    /// Target granularity in pixels.
    #[arg(long, global = true, default_value_t = 3.0)]
    tau: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// TOML file with `[build]` and `[refine]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a hierarchy from a splat file.
    Build(InOut),
    /// Remove nodes no camera can select in the tau range.
    Compact {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        cameras: PathBuf,
        /// Upper end of the tau range; defaults to the widest camera's resolution.
        #[arg(long)]
        tau_max: Option<f64>,
    },
    /// Optimize interior nodes against the cameras' images.
    Refine {
        #[command(flatten)]
        io: InOut,
        /// Camera file whose entries carry `image` paths.
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Split a capture into chunks and write a manifest.
    Chunk {
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        chunk_size: f64,
        /// Also write a skybox splat file with this many Gaussians.
        #[arg(long)]
        skybox: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Merge the chunk hierarchies of a manifest into one.
    Consolidate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render one camera at `--tau`.
    Render {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Camera id; defaults to the first camera.
        #[arg(long)]
        camera: Option<u32>,
        /// PNG output.
        #[arg(short, long)]
        output: PathBuf,
        /// Raw f32 file with depth and inverse-depth planes.
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Replay a camera path and write per-frame statistics as CSV.
    Bench {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print hierarchy statistics.
    Inspect {
        hierarchy: PathBuf,
        /// Also report cut sizes at `--tau` for these cameras.
        #[arg(long)]
        cameras: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InOut {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    pool.install(|| run(&cli))
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => io::read_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Build(InOut { input, output }) => {
            let leaves = io::read_splats(input).with_context(|| format!("reading {}", input.display()))?;
            let h = build_bvh(&leaves, &config.build)?;
            info!("{} leaves -> {} nodes, depth {}", leaves.len(), h.len(), h.depth());
            io::write_hierarchy(output, &h)?;
        }
        Command::Compact { io: InOut { input, output }, cameras, tau_max } => {
            let h = read_hierarchy(input)?;
            let cams: Vec<CameraModel> = io::read_cameras(cameras)?.into_iter().map(|c| c.camera).collect();
            let tau_max = tau_max.unwrap_or_else(|| default_tau_max(&cams));
            if !(cli.tau > 0.0 && cli.tau <= tau_max) {
                bail!("need 0 < tau <= tau_max, got {} and {tau_max}", cli.tau);
            }
            let out = compact(&h, &cams, cli.tau, tau_max);
            info!("{} -> {} nodes", h.len(), out.len());
            io::write_hierarchy(output, &out)?;
        }
        Command::Refine { io: InOut { input, output }, cameras, steps } => {
            let h = read_hierarchy(input)?;
            let records = io::read_cameras(cameras)?;
            let base = parent_dir(cameras);
            let mut cams = Vec::new();
            let mut images = Vec::new();
            for r in records {
                let Some(img) = &r.image else { bail!("camera {} has no image", r.id) };
                let path = base.join(img);
                images.push(io::read_png(&path).with_context(|| format!("reading {}", path.display()))?);
                cams.push(r.camera);
            }
            let mut cfg = config.refine.clone();
            cfg.seed = cli.seed;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let refined = refine_hierarchy(&h, &cams, &images, &cfg)?;
            if let (Some(first), Some(last)) = (refined.steps.first(), refined.steps.last()) {
                info!("{} steps, loss {:.5} -> {:.5}", refined.steps.len(), first.loss, last.loss);
            }
            io::write_hierarchy(output, &refined.hierarchy)?;
        }
        Command::Chunk { cameras, points, observations, chunk_size, skybox, output } => {
            let cams: Vec<(u32, CameraModel)> = io::read_cameras(cameras)?.into_iter().map(|c| (c.id, c.camera)).collect();
            let sfm = io::read_sfm(points, observations)?;
            let grid = make_grid(&sfm, &cams, *chunk_size)?;
            let mut extent = grid.iter().fold(Aabb::empty(), |a, c| a.union(&c.bounds));
            for p in &sfm.positions {
                extent.grow(p);
            }
            let center = extent.center();
            let diameter = extent.extent().norm().max(f64::MIN_POSITIVE);
            let skybox = match skybox {
                Some(n) => {
                    let path = PathBuf::from("skybox.ply");
                    io::write_splats(parent_dir(output).join(&path), &make_skybox(diameter, center, *n, cli.seed)?)?;
                    Some(path)
                }
                None => None,
            };
            let manifest = SceneManifest {
                chunk_size: *chunk_size,
                scene_diameter: diameter,
                scene_center: center.into(),
                scaffold: None,
                skybox,
                chunks: grid
                    .iter()
                    .map(|c| {
                        let stem = format!("chunk_{}_{}", c.grid[0], c.grid[1]);
                        ManifestChunk {
                            grid: c.grid,
                            bounds: c.bounds,
                            camera_ids: c.camera_ids.iter().copied().collect(),
                            hierarchy: format!("{stem}.h3dg").into(),
                            splats: Some(format!("{stem}.ply").into()),
                        }
                    })
                    .collect(),
            };
            info!("{} chunks", manifest.chunks.len());
            io::write_manifest(output, &manifest)?;
        }
        Command::Consolidate { manifest, output } => {
            let base = parent_dir(manifest);
            let m = io::read_manifest(manifest)?;
            let scaffold = match &m.scaffold {
                Some(p) => io::read_splats(base.join(p))?,
                None => Vec::new(),
            };
            let mut chunks = Vec::with_capacity(m.chunks.len());
            for c in &m.chunks {
                let spec = ChunkSpec {
                    grid: c.grid,
                    bounds: c.bounds,
                    camera_ids: c.camera_ids.iter().copied().collect(),
                    sfm_point_ids: BTreeSet::new(),
                };
                let hier_path = base.join(&c.hierarchy);
                let h = if hier_path.exists() {
                    read_hierarchy(&hier_path)?
                } else if let Some(s) = &c.splats {
                    let trained = io::read_splats(base.join(s))?;
                    let leaves: Vec<_> = assemble_chunk_leaves(&spec, &trained, &scaffold).into_iter().map(|(g, _)| g).collect();
                    let h = build_bvh(&leaves, &config.build)?;
                    io::write_hierarchy(&hier_path, &h)?;
                    h
                } else {
                    bail!("chunk {:?}: neither {} nor a splat file exists", c.grid, hier_path.display());
                };
                chunks.push((spec, h));
            }
            let sky = match &m.skybox {
                Some(p) => Some(build_bvh(&io::read_splats(base.join(p))?, &config.build)?),
                None => None,
            };
            let out = consolidate(&chunks, sky.as_ref());
            info!("{} chunks -> {} nodes, {} leaves", chunks.len(), out.hierarchy.len(), out.hierarchy.leaf_count());
            io::write_hierarchy(output, &out.hierarchy)?;
        }
        Command::Render { hierarchy, cameras, camera, output, depth } => {
            let h = read_hierarchy(hierarchy)?;
            let cam = pick_camera(io::read_cameras(cameras)?, *camera)?;
            let cut = select_cut(&h, &GranularityQuery { camera: cam.clone(), tau: cli.tau });
            let out = render(&cut_splats(&h, &cut), &cam);
            info!("cut {} nodes, {} rendered", cut.len(), out.rendered);
            io::write_png(output, &apply_exposure(&out.color, &cam.exposure))?;
            if let Some(d) = depth {
                io::write_planes(d, &[&out.depth, &out.inverse_depth])?;
            }
        }
        Command::Bench { hierarchy, path, output } => {
            let h = read_hierarchy(hierarchy)?;
            let report = bench_path(&h, &io::read_camera_path(path)?, cli.tau);
            info!(
                "{} frames, mean rendered {:.0} ({:.1}% of {} leaves), {} transferred",
                report.frames.len(),
                report.mean_rendered(),
                report.mean_rendered_pct(),
                report.leaf_count,
                report.total_transferred()
            );
            report.write_csv(BufWriter::new(File::create(output)?))?;
        }
        Command::Inspect { hierarchy, cameras } => {
            let h = read_hierarchy(hierarchy)?;
            let max_children = h.nodes.iter().map(|n| n.child_count).max().unwrap_or(0);
            let b = &h.root().bounds;
            println!("nodes        {}", h.len());
            println!("leaves       {}", h.leaf_count());
            println!("interior     {}", h.interior_count());
            println!("depth        {}", h.depth());
            println!("max children {max_children}");
            println!("sh degree    {}", h.sh_degree);
            println!("bounds       [{:.3} {:.3} {:.3}] .. [{:.3} {:.3} {:.3}]", b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z);
            if let Some(c) = cameras {
                for r in io::read_cameras(c)? {
                    let cut = select_cut(&h, &GranularityQuery { camera: r.camera, tau: cli.tau });
                    println!("camera {:>4}  cut {} at tau {}", r.id, cut.len(), cli.tau);
                }
            }
        }
    }
    Ok(())
}

fn read_hierarchy(p: &Path) -> Result<Hierarchy> {
    io::read_hierarchy(p).with_context(|| format!("reading {}", p.display()))
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn pick_camera(records: Vec<CameraRecord>, id: Option<u32>) -> Result<CameraModel> {
    let found = match id {
        Some(id) => records.into_iter().find(|r| r.id == id),
        None => records.into_iter().next(),
    };
    match found {
        Some(r) => Ok(r.camera),
        None => bail!("camera {id:?} not found"),
    }
}
