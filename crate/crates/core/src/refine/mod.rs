//! Optimisation of interior nodes against training views, plus the depth,
//! exposure and densification-statistic helpers used around training.

mod depth;
mod exposure;
mod loss;
mod stats;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Image;
use crate::lod::{cut_splats, select_cut, GranularityQuery};
use crate::math;
use crate::model::{CameraModel, CutEntry, Gaussian, Hierarchy, ShCoeffs, SH_COEFFS};
use crate::render::{apply_exposure, RenderGradients, Renderer};

pub use depth::{align_depth, depth_loss, depth_loss_weight, fit_depth_alignment, DepthAlignment, DepthError};
pub use exposure::{optimize_exposure, ExposureSchedule};
pub use loss::{l1_loss, photometric_loss, SSIM_WEIGHT};
pub use stats::{max_grad_stat, MaxGradStat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("hierarchy has no interior nodes")]
    NoInteriorNodes,
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error("{cameras} cameras but {images} images")]
    ViewMismatch { cameras: usize, images: usize },
    #[error("image {index} is {got:?}, camera expects {want:?}")]
    ImageSize {
        index: usize,
        got: [usize; 2],
        want: [usize; 2],
    },
}

/// Plain gradient-descent step sizes, applied to the gradient of the loss
/// summed (not averaged) over pixels so they do not depend on resolution.
/// Scale steps are taken in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub falloff: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl LearningRates {
    fn scaled(&self, k: f64) -> Self {
        Self {
            mean: self.mean * k,
            log_scale: self.log_scale * k,
            rotation: self.rotation * k,
            falloff: self.falloff * k,
            sh_dc: self.sh_dc * k,
            sh_rest: self.sh_rest * k,
        }
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 3e-6,
            log_scale: 8e-4,
            rotation: 8e-5,
            falloff: 3e-3,
            sh_dc: 3e-2,
            sh_rest: 1.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Target granularity range in pixels; equal bounds fix the target.
    pub tau_min: f64,
    pub tau_max: f64,
    pub steps: usize,
    pub learning_rates: LearningRates,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            tau_min: 3.0,
            tau_max: 48.0,
            steps: 200,
            learning_rates: LearningRates::default(),
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max && self.tau_max.is_finite()) {
            return Err(RefineError::InvalidConfig(format!(
                "need 0 < tau_min <= tau_max, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        Ok(())
    }
}

/// Log-uniform target: `tau_max^xi * tau_min^(1 - xi)`.
pub fn sample_tau(xi: f64, cfg: &RefineConfig) -> f64 {
    cfg.tau_max.powf(xi) * cfg.tau_min.powf(1.0 - xi)
}

/// Gradient with respect to a node's stored attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGradient {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// Raw `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub falloff: f64,
    pub sh: ShCoeffs,
}

impl Default for NodeGradient {
    fn default() -> Self {
        Self {
            mean: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: [0.0; 4],
            falloff: 0.0,
            sh: [[0.0; 3]; SH_COEFFS],
        }
    }
}

impl NodeGradient {
    fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Push splat gradients of a rendered cut back onto node attributes:
/// transitioning nodes split their gradient between themselves and their
/// parent through the interpolation.
pub fn cut_gradients(h: &Hierarchy, cut: &[CutEntry], grads: &RenderGradients) -> Vec<NodeGradient> {
    let mut out = vec![NodeGradient::default(); h.len()];
    for (entry, g) in cut.iter().zip(&grads.splats) {
        let node = &h.nodes[entry.node];
        let parent = node.parent.filter(|_| entry.t < 1.0);
        let Some(p) = parent else {
            let o = &mut out[entry.node];
            o.mean += g.mean;
            o.scale += g.scale;
            o.falloff += g.falloff;
            for k in 0..4 {
                o.rotation[k] += g.rotation[k];
            }
            add_sh(&mut o.sh, &g.sh, 1.0);
            continue;
        };
        let t = entry.t;
        let s = 1.0 - t;
        let qc = node.gaussian.rotation.into_inner().coords;
        let qp = h.nodes[p].gaussian.rotation.into_inner().coords;
        let sign = if qc.dot(&qp) < 0.0 { -1.0 } else { 1.0 };
        let u = t * sign * qc + s * qp;
        let norm = u.norm();
        let unit = u / norm;
        // nalgebra coords are [x, y, z, w]; gradients are [w, x, y, z]
        let g_u = math::normalize_backward([unit.w, unit.x, unit.y, unit.z], norm, g.rotation);

        let c = &mut out[entry.node];
        c.mean += t * g.mean;
        c.scale += t * g.scale;
        c.falloff += g.falloff;
        for k in 0..4 {
            c.rotation[k] += sign * t * g_u[k];
        }
        add_sh(&mut c.sh, &g.sh, t);

        let pg = &mut out[p];
        pg.mean += s * g.mean;
        pg.scale += s * g.scale;
        pg.falloff += g.parent_falloff;
        for k in 0..4 {
            pg.rotation[k] += s * g_u[k];
        }
        add_sh(&mut pg.sh, &g.sh, s);
    }
    out
}

fn add_sh(dst: &mut ShCoeffs, src: &ShCoeffs, w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        for c in 0..3 {
            d[c] += w * s[c];
        }
    }
}

/// One descent step on a node. Falloff goes through `|.|`, scale through `exp`.
fn apply_step(g: &mut Gaussian, grad: &NodeGradient, lr: &LearningRates, pixels: f64) {
    let lr = &lr.scaled(pixels);
    g.mean -= lr.mean * grad.mean;
    for k in 0..3 {
        let log_s = g.scale[k].ln() - lr.log_scale * grad.scale[k] * g.scale[k];
        g.scale[k] = log_s.exp();
    }
    let q = g.quat_wxyz();
    let q = Quaternion::new(
        q[0] - lr.rotation * grad.rotation[0],
        q[1] - lr.rotation * grad.rotation[1],
        q[2] - lr.rotation * grad.rotation[2],
        q[3] - lr.rotation * grad.rotation[3],
    );
    if q.norm() > 0.0 {
        g.rotation = UnitQuaternion::from_quaternion(q);
    }
    g.falloff = (g.falloff - lr.falloff * grad.falloff).abs();
    for k in 0..SH_COEFFS {
        let rate = if k == 0 { lr.sh_dc } else { lr.sh_rest };
        for c in 0..3 {
            g.sh[k][c] -= rate * grad.sh[k][c];
        }
    }
}

/// Loss of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub view: usize,
    pub tau: f64,
    pub loss: f64,
    pub cut_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub hierarchy: Hierarchy,
    pub steps: Vec<StepRecord>,
}

/// Photometric loss of the cut at `tau` from `cam` against `target`, and
/// the gradient on every node's attributes.
pub fn cut_loss_and_gradients(
    h: &Hierarchy,
    cam: &CameraModel,
    target: &Image,
    tau: f64,
) -> (f64, Vec<CutEntry>, Vec<NodeGradient>) {
    let cut = select_cut(
        h,
        &GranularityQuery {
            camera: cam.clone(),
            tau,
        },
    );
    let splats = cut_splats(h, &cut);
    let mut renderer = Renderer::new(cam.clone());
    let out = renderer.forward(&splats);
    let exposed = apply_exposure(&out.color, &cam.exposure);
    let (loss, d_img) = photometric_loss(&exposed, target);
    let grads = renderer.backward(&d_img).expect("forward ran and sizes match");
    let node_grads = cut_gradients(h, &cut, &grads);
    (loss, cut, node_grads)
}

/// Refine interior nodes against `images` (one per camera, full
/// resolution). Leaves and topology are left untouched.
pub fn refine_hierarchy(
    h: &Hierarchy,
    cams: &[CameraModel],
    images: &[Image],
    cfg: &RefineConfig,
) -> Result<Refined, RefineError> {
    cfg.validate()?;
    if h.interior_count() == 0 {
        return Err(RefineError::NoInteriorNodes);
    }
    if cams.len() != images.len() || cams.is_empty() {
        return Err(RefineError::ViewMismatch {
            cameras: cams.len(),
            images: images.len(),
        });
    }
    for (index, (c, img)) in cams.iter().zip(images).enumerate() {
        let want = [c.width(), c.height()];
        if [img.width, img.height] != want {
            return Err(RefineError::ImageSize {
                index,
                got: [img.width, img.height],
                want,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hier = h.clone();
    let mut steps = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let view = rng.random_range(0..cams.len());
        let tau = sample_tau(rng.random::<f64>(), cfg);
        let (loss, cut, grads) = cut_loss_and_gradients(&hier, &cams[view], &images[view], tau);
        let pixels = (cams[view].width() * cams[view].height()) as f64;
        for (i, g) in grads.iter().enumerate() {
            if hier.nodes[i].is_leaf() || g.is_zero() {
                continue;
            }
            apply_step(&mut hier.nodes[i].gaussian, g, &cfg.learning_rates, pixels);
        }
        steps.push(StepRecord {
            view,
            tau,
            loss,
            cut_size: cut.len(),
        });
    }
    Ok(Refined { hierarchy: hier, steps })
}
