//! Camera-path replay with workload accounting.

use std::collections::HashSet;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::io::CameraPath;
use crate::lod::{cut_nodes, cut_splats, cut_weights};
use crate::model::Hierarchy;
use crate::render::render;

/// The cut is recomputed on every `CUT_INTERVAL`-th frame and reused between.
pub const CUT_INTERVAL: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub timestamp: f64,
    pub cut_updated: bool,
    pub cut_size: usize,
    /// Splats that survived culling.
    pub rendered: usize,
    pub rendered_pct: f64,
    /// Nodes entering the cut since the previous update.
    pub transferred: usize,
    pub cut_expand_ms: f64,
    pub weights_ms: f64,
    pub preprocess_ms: f64,
    pub duplicate_ms: f64,
    pub tile_ranges_ms: f64,
    pub alpha_blend_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub tau: f64,
    pub leaf_count: usize,
    pub frames: Vec<FrameReport>,
}

impl BenchReport {
    pub fn mean_rendered(&self) -> f64 {
        self.mean(|f| f.rendered as f64)
    }

    pub fn mean_rendered_pct(&self) -> f64 {
        self.mean(|f| f.rendered_pct)
    }

    pub fn total_transferred(&self) -> usize {
        self.frames.iter().map(|f| f.transferred).sum()
    }

    fn mean(&self, f: impl Fn(&FrameReport) -> f64) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(f).sum::<f64>() / self.frames.len() as f64
    }

    /// One row per frame.
    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for f in &self.frames {
            out.serialize(f)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn bench_path(h: &Hierarchy, path: &CameraPath, tau: f64) -> BenchReport {
    let leaf_count = h.leaf_count();
    let mut frames = Vec::with_capacity(path.frames.len());
    let mut cut: Vec<usize> = Vec::new();
    let mut resident: HashSet<usize> = HashSet::new();
    for (frame, (timestamp, cam)) in path.frames.iter().enumerate() {
        let cut_updated = frame % CUT_INTERVAL == 0;
        let mut transferred = 0;
        let mut cut_expand = Duration::ZERO;
        if cut_updated {
            let t0 = Instant::now();
            cut = cut_nodes(h, cam, tau);
            cut_expand = t0.elapsed();
            let next: HashSet<usize> = cut.iter().copied().collect();
            transferred = next.difference(&resident).count();
            resident = next;
        }
        let t0 = Instant::now();
        let entries = cut_weights(h, cam, tau, &cut);
        let splats = cut_splats(h, &entries);
        let weights = t0.elapsed();
        let out = render(&splats, cam);
        frames.push(FrameReport {
            frame,
            timestamp: *timestamp,
            cut_updated,
            cut_size: cut.len(),
            rendered: out.rendered,
            rendered_pct: 100.0 * out.rendered as f64 / leaf_count as f64,
            transferred,
            cut_expand_ms: ms(cut_expand),
            weights_ms: ms(weights),
            preprocess_ms: ms(out.timings.preprocess),
            duplicate_ms: ms(out.timings.duplicate),
            tile_ranges_ms: ms(out.timings.tile_ranges),
            alpha_blend_ms: ms(out.timings.alpha_blend),
        });
    }
    BenchReport { tau, leaf_count, frames }
}
