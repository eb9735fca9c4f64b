//! Deterministic tile-based software rasterizer with analytic gradients.

mod backward;
mod project;

use std::time::{Duration, Instant};

use nalgebra::{Matrix3x4, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Image, Plane};
use crate::model::{CameraModel, Gaussian};

pub use backward::{RenderGradients, SplatGradient};
pub use project::{project, ProjectedSplat, DILATION};

/// Blend alpha is clamped to this value.
pub const MAX_ALPHA: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// A pixel stops accumulating once its transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("backward pass requires a preceding forward pass")]
    MissingForwardState,
    #[error("gradient image is {got:?}, expected {want:?}")]
    GradientShape { got: [usize; 2], want: [usize; 2] },
}

/// How a splat's per-pixel alpha is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Blend {
    /// `min(0.99, falloff * alpha_scale * G)`.
    Plain,
    /// A cut node fading in from its parent: `t * a_own + (1 - t) * a'`,
    /// where `a'` is the per-sibling share of the parent's clamped alpha,
    /// both evaluated with the splat's (interpolated) footprint.
    Transition {
        t: f64,
        parent_falloff: f64,
        siblings: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splat {
    pub gaussian: Gaussian,
    pub blend: Blend,
}

impl Splat {
    pub fn plain(gaussian: Gaussian) -> Self {
        Self {
            gaussian,
            blend: Blend::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub preprocess: Duration,
    pub duplicate: Duration,
    pub tile_ranges: Duration,
    pub alpha_blend: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOutput {
    /// Linear color before exposure.
    pub color: Image,
    /// `sum T a z`.
    pub depth: Plane,
    /// `sum T a / z`.
    pub inverse_depth: Plane,
    /// Transmittance left after the last blended splat.
    pub transmittance: Plane,
    /// Splats that survived culling.
    pub rendered: usize,
    pub timings: StageTimings,
}

impl RenderOutput {
    fn empty(w: usize, h: usize) -> Self {
        Self {
            color: Image::new(w, h),
            depth: Plane::new(w, h),
            inverse_depth: Plane::new(w, h),
            transmittance: Plane::filled(w, h, 1.0),
            rendered: 0,
            timings: StageTimings::default(),
        }
    }
}

/// Per-pixel alpha of a splat and the pieces needed to differentiate it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AlphaEval {
    pub alpha: f64,
    pub g: f64,
    pub d: Vector2<f64>,
    /// Unclamped own and parent alpha terms.
    pub own: f64,
    pub parent: f64,
    /// Parent transitional share.
    pub shared: f64,
}

/// Alpha of `p` at pixel `(x, y)`, or `None` when the contribution is
/// below the skip threshold.
pub(crate) fn pixel_alpha(
    p: &ProjectedSplat,
    falloff: f64,
    blend: &Blend,
    x: usize,
    y: usize,
) -> Option<AlphaEval> {
    let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - p.mean2d;
    let power = -0.5 * (p.conic[(0, 0)] * d.x * d.x + 2.0 * p.conic[(0, 1)] * d.x * d.y + p.conic[(1, 1)] * d.y * d.y);
    if power > 0.0 {
        return None;
    }
    let g = power.exp();
    let own = falloff.max(0.0) * p.alpha_scale * g;
    match *blend {
        Blend::Plain => {
            let alpha = own.min(MAX_ALPHA);
            (alpha >= MIN_ALPHA).then_some(AlphaEval {
                alpha,
                g,
                d,
                own,
                parent: 0.0,
                shared: 0.0,
            })
        }
        Blend::Transition {
            t,
            parent_falloff,
            siblings,
        } => {
            let parent = parent_falloff.max(0.0) * p.alpha_scale * g;
            let k = siblings.max(1) as f64;
            let shared = 1.0 - (1.0 - parent.min(MAX_ALPHA)).powf(1.0 / k);
            let alpha = t * own.min(MAX_ALPHA) + (1.0 - t) * shared;
            // coverage of all siblings blended at this alpha
            let coverage = 1.0 - (1.0 - alpha).powf(k);
            (coverage >= MIN_ALPHA).then_some(AlphaEval {
                alpha,
                g,
                d,
                own,
                parent,
                shared,
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PixelOut {
    color: [f64; 3],
    depth: f64,
    inverse_depth: f64,
    transmittance: f64,
}

/// Front-to-back blend of `ranks` (already depth-ordered) at one pixel.
fn blend_pixel<'a>(
    x: usize,
    y: usize,
    ranks: impl Iterator<Item = &'a usize>,
    order: &[usize],
    splats: &[Splat],
    projected: &[Option<ProjectedSplat>],
) -> PixelOut {
    let mut out = PixelOut {
        color: [0.0; 3],
        depth: 0.0,
        inverse_depth: 0.0,
        transmittance: 1.0,
    };
    for &rank in ranks {
        let i = order[rank];
        let p = projected[i].as_ref().expect("ordered splats are visible");
        if !p.covers(x, y) {
            continue;
        }
        let s = &splats[i];
        let Some(a) = pixel_alpha(p, s.gaussian.falloff, &s.blend, x, y) else {
            continue;
        };
        let w = a.alpha * out.transmittance;
        for c in 0..3 {
            out.color[c] += p.color[c] * w;
        }
        out.depth += p.depth * w;
        out.inverse_depth += w / p.depth;
        out.transmittance *= 1.0 - a.alpha;
        if out.transmittance < MIN_TRANSMITTANCE {
            break;
        }
    }
    out
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardState {
    pub splats: Vec<Splat>,
    pub projected: Vec<Option<ProjectedSplat>>,
    /// Splat indices of visible splats in blend order.
    pub order: Vec<usize>,
    /// Per tile: ranks into `order`.
    pub tiles: Vec<Vec<usize>>,
    pub tiles_x: usize,
    pub color: Image,
}

fn tile_rect(tile: usize, tiles_x: usize, w: usize, h: usize) -> [usize; 4] {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    [x0, y0, (x0 + TILE_SIZE).min(w), (y0 + TILE_SIZE).min(h)]
}

fn forward(splats: &[Splat], cam: &CameraModel) -> (RenderOutput, ForwardState) {
    let (w, h) = (cam.width(), cam.height());
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut out = RenderOutput::empty(w, h);

    let clock = Instant::now();
    let projected: Vec<Option<ProjectedSplat>> =
        splats.par_iter().map(|s| project(&s.gaussian, cam)).collect();
    out.timings.preprocess = clock.elapsed();

    let clock = Instant::now();
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| projected[i].is_some()).collect();
    let depth = |i: usize| projected[i].as_ref().map_or(0.0, |p| p.depth);
    order.par_sort_unstable_by(|&a, &b| depth(a).total_cmp(&depth(b)).then(a.cmp(&b)));
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let r = projected[i].as_ref().expect("visible").rect;
        for ty in r[1] / TILE_SIZE..=(r[3] - 1) / TILE_SIZE {
            for tx in r[0] / TILE_SIZE..=(r[2] - 1) / TILE_SIZE {
                keys.push((ty * tiles_x + tx, rank));
            }
        }
    }
    out.timings.duplicate = clock.elapsed();

    let clock = Instant::now();
    keys.par_sort_unstable();
    let mut tiles: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
    for (tile, rank) in keys {
        tiles[tile].push(rank);
    }
    out.timings.tile_ranges = clock.elapsed();

    let clock = Instant::now();
    let blended: Vec<Vec<PixelOut>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, ranks)| {
            let r = tile_rect(tile, tiles_x, w, h);
            let mut px = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for y in r[1]..r[3] {
                for x in r[0]..r[2] {
                    px.push(blend_pixel(x, y, ranks.iter(), &order, splats, &projected));
                }
            }
            px
        })
        .collect();
    for (tile, px) in blended.into_iter().enumerate() {
        let r = tile_rect(tile, tiles_x, w, h);
        let mut it = px.into_iter();
        for y in r[1]..r[3] {
            for x in r[0]..r[2] {
                let p = it.next().expect("tile pixel");
                out.color.set(x, y, p.color);
                out.depth.set(x, y, p.depth);
                out.inverse_depth.set(x, y, p.inverse_depth);
                out.transmittance.set(x, y, p.transmittance);
            }
        }
    }
    out.timings.alpha_blend = clock.elapsed();
    out.rendered = order.len();

    let state = ForwardState {
        splats: splats.to_vec(),
        projected,
        order,
        tiles,
        tiles_x,
        color: out.color.clone(),
    };
    (out, state)
}

/// Tiled render of `splats` as seen from `cam`.
pub fn render(splats: &[Splat], cam: &CameraModel) -> RenderOutput {
    forward(splats, cam).0
}

/// [`render`] for plain Gaussians.
pub fn render_gaussians(gaussians: &[Gaussian], cam: &CameraModel) -> RenderOutput {
    let splats: Vec<Splat> = gaussians.iter().cloned().map(Splat::plain).collect();
    render(&splats, cam)
}

/// Untiled reference: every pixel walks the full depth-sorted list.
pub fn render_reference(splats: &[Splat], cam: &CameraModel) -> RenderOutput {
    let (w, h) = (cam.width(), cam.height());
    let mut out = RenderOutput::empty(w, h);
    let projected: Vec<Option<ProjectedSplat>> = splats.iter().map(|s| project(&s.gaussian, cam)).collect();
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (projected[a].as_ref().unwrap().depth, projected[b].as_ref().unwrap().depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let ranks: Vec<usize> = (0..order.len()).collect();
    for y in 0..h {
        for x in 0..w {
            let p = blend_pixel(x, y, ranks.iter(), &order, splats, &projected);
            out.color.set(x, y, p.color);
            out.depth.set(x, y, p.depth);
            out.inverse_depth.set(x, y, p.inverse_depth);
            out.transmittance.set(x, y, p.transmittance);
        }
    }
    out.rendered = order.len();
    out
}

/// `E [C | 1]^T` per pixel.
pub fn apply_exposure(color: &Image, e: &Matrix3x4<f64>) -> Image {
    color.map(|c| {
        let mut o = [0.0; 3];
        for (r, v) in o.iter_mut().enumerate() {
            *v = e[(r, 0)] * c[0] + e[(r, 1)] * c[1] + e[(r, 2)] * c[2] + e[(r, 3)];
        }
        o
    })
}

/// Forward renderer that keeps the state needed for gradients.
#[derive(Debug, Clone)]
pub struct Renderer {
    camera: CameraModel,
    state: Option<ForwardState>,
}

impl Renderer {
    pub fn new(camera: CameraModel) -> Self {
        Self { camera, state: None }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn forward(&mut self, splats: &[Splat]) -> RenderOutput {
        let (out, state) = forward(splats, &self.camera);
        self.state = Some(state);
        out
    }

    /// Gradients of a loss given `dL/d(exposed image)`, where the exposed
    /// image is [`apply_exposure`] of the last forward color with the
    /// camera's exposure.
    pub fn backward(&self, grad: &Image) -> Result<RenderGradients, RenderError> {
        let state = self.state.as_ref().ok_or(RenderError::MissingForwardState)?;
        let want = [self.camera.width(), self.camera.height()];
        if [grad.width, grad.height] != want {
            return Err(RenderError::GradientShape {
                got: [grad.width, grad.height],
                want,
            });
        }
        Ok(backward::backward(state, &self.camera, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn cam(w: u32, h: u32) -> CameraModel {
        CameraModel::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 60.0, [w, h]).unwrap()
    }

    #[test]
    fn empty_scene_is_black() {
        let out = render(&[], &cam(40, 30));
        assert!(out.color.pixels.iter().all(|p| *p == [0.0; 3]));
        assert!(out.transmittance.data.iter().all(|&t| t == 1.0));
        assert_eq!(out.rendered, 0);
    }

    #[test]
    fn single_splat_matches_closed_form() {
        let c = cam(32, 32);
        let g = Gaussian::isotropic(Vector3::new(0.01, -0.02, 4.0), 0.2, 1.0, [0.8, 0.3, 0.1]);
        let out = render_gaussians(std::slice::from_ref(&g), &c);
        let p = project(&g, &c).unwrap();
        for (x, y) in [(16, 16), (14, 17), (20, 12)] {
            let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - p.mean2d;
            let gval = (-0.5 * (d.transpose() * p.conic * d)[(0, 0)]).exp();
            let alpha = (p.alpha_scale * gval).min(MAX_ALPHA);
            assert_relative_eq!(out.color.get(x, y)[0], alpha * p.color[0], epsilon = 1e-12);
            assert_relative_eq!(out.depth.get(x, y), alpha * 4.0, epsilon = 1e-12);
            assert_relative_eq!(out.inverse_depth.get(x, y), alpha / 4.0, epsilon = 1e-12);
            assert_relative_eq!(out.transmittance.get(x, y), 1.0 - alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let c = cam(48, 40);
        let a = Gaussian::isotropic(Vector3::new(0.1, 0.0, 3.0), 0.3, 0.7, [1.0, 0.0, 0.0]);
        let b = Gaussian::isotropic(Vector3::new(-0.1, 0.1, 3.2), 0.3, 0.7, [0.0, 0.0, 1.0]);
        let ab = render_gaussians(&[a.clone(), b.clone()], &c);
        let ba = render_gaussians(&[b, a], &c);
        assert_eq!(ab.color, ba.color);
    }

    #[test]
    fn tiled_equals_reference_and_energy_bound() {
        let c = cam(70, 45);
        let splats: Vec<Splat> = (0..60)
            .map(|i| {
                let f = i as f64;
                let g = Gaussian::isotropic(
                    Vector3::new((f * 0.37).sin() * 1.5, (f * 0.71).cos(), 3.0 + (f * 0.13).sin()),
                    0.05 + 0.1 * ((f * 0.5).sin().abs()),
                    0.2 + 0.8 * (f * 0.9).cos().abs() + if i % 7 == 0 { 2.0 } else { 0.0 },
                    [0.3, 0.6, 0.9],
                );
                if i % 3 == 0 {
                    Splat {
                        gaussian: g,
                        blend: Blend::Transition {
                            t: 0.4,
                            parent_falloff: 1.3,
                            siblings: 3,
                        },
                    }
                } else {
                    Splat::plain(g)
                }
            })
            .collect();
        let tiled = render(&splats, &c);
        let naive = render_reference(&splats, &c);
        assert_eq!(tiled.color, naive.color);
        assert_eq!(tiled.depth, naive.depth);
        assert_eq!(tiled.transmittance, naive.transmittance);
        for (x, y) in [(0usize, 0usize), (35, 22), (69, 44)] {
            assert!(1.0 - tiled.transmittance.get(x, y) <= 1.0);
        }
        assert!(tiled.transmittance.data.iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn large_falloff_only_clamps() {
        let c = cam(32, 32);
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.2, 5.0, [0.5; 3]);
        let out = render_gaussians(&[g.clone()], &c);
        assert!(out.color.pixels.iter().all(|p| p.iter().all(|v| v.is_finite())));
        assert!(out.transmittance.data.iter().all(|&t| t >= 1.0 - MAX_ALPHA - 1e-15));
        // a falloff that never reaches the clamp renders identically when
        // capped at any larger value
        let mut small = g.clone();
        small.falloff = 0.5;
        let mut capped = small.clone();
        capped.falloff = small.falloff.min(1e6);
        assert_eq!(render_gaussians(&[small], &c).color, render_gaussians(&[capped], &c).color);
    }

    #[test]
    fn exposure_examples() {
        let img = Image::filled(2, 2, [0.2, 0.4, 0.6]);
        let id = crate::model::identity_exposure();
        assert_eq!(apply_exposure(&img, &id), img);
        let double = id * 2.0;
        assert_eq!(apply_exposure(&img, &double).get(1, 1), [0.4, 0.8, 1.2]);
        let mut bias = id;
        bias[(0, 3)] = 0.1;
        let out = apply_exposure(&img, &bias).get(0, 1);
        assert_relative_eq!(out[0], 0.3, epsilon = 1e-15);
        assert_eq!(out[1], 0.4);
    }

    #[test]
    fn backward_without_forward_fails() {
        let r = Renderer::new(cam(8, 8));
        assert_eq!(r.backward(&Image::new(8, 8)).unwrap_err(), RenderError::MissingForwardState);
    }
}
