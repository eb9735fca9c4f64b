use nalgebra::Matrix3x4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::sign;
use crate::frame::Image;
use crate::model::identity_exposure;
use crate::render::apply_exposure;

/// Warm-up plus log-linear decay schedule for the exposure optimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub delay_mult: f64,
    pub delay_steps: usize,
    pub max_steps: usize,
}

impl ExposureSchedule {
    pub fn new(max_steps: usize) -> Self {
        Self {
            lr_init: 1e-3,
            lr_final: 1e-4,
            delay_mult: 1e-3,
            delay_steps: 5000,
            max_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let delay = if self.delay_steps > 0 {
            let x = (step as f64 / self.delay_steps as f64).clamp(0.0, 1.0);
            self.delay_mult + (1.0 - self.delay_mult) * (0.5 * std::f64::consts::PI * x).sin()
        } else {
            1.0
        };
        let t = (step as f64 / self.max_steps.max(1) as f64).clamp(0.0, 1.0);
        delay * (self.lr_init.ln() * (1.0 - t) + self.lr_final.ln() * t).exp()
    }
}

/// L1 loss of the exposed render against its target, and `dL/dE`.
fn exposure_grad(render: &Image, target: &Image, e: &Matrix3x4<f64>) -> (f64, Matrix3x4<f64>) {
    let exposed = apply_exposure(render, e);
    let n = (render.pixels.len() * 3) as f64;
    let mut g = Matrix3x4::zeros();
    let mut loss = 0.0;
    for ((x, c), t) in exposed.pixels.iter().zip(&render.pixels).zip(&target.pixels) {
        let ext = [c[0], c[1], c[2], 1.0];
        for r in 0..3 {
            let d = x[r] - t[r];
            loss += d.abs();
            let s = sign(d) / n;
            for k in 0..4 {
                g[(r, k)] += s * ext[k];
            }
        }
    }
    (loss / n, g)
}

/// Per-image affine exposure fitted with Adam, starting from `[I | 0]`.
pub fn optimize_exposure(renders: &[Image], targets: &[Image], steps: usize) -> Vec<Matrix3x4<f64>> {
    let schedule = ExposureSchedule::new(steps);
    renders
        .par_iter()
        .zip(targets)
        .map(|(r, t)| fit_one(r, t, steps, &schedule))
        .collect()
}

fn fit_one(render: &Image, target: &Image, steps: usize, schedule: &ExposureSchedule) -> Matrix3x4<f64> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-15;
    let mut e = identity_exposure();
    let mut m = Matrix3x4::zeros();
    let mut v = Matrix3x4::zeros();
    for step in 0..steps {
        let (_, g) = exposure_grad(render, target, &e);
        m = m * B1 + g * (1.0 - B1);
        v = v * B2 + g.component_mul(&g) * (1.0 - B2);
        let k = (step + 1) as i32;
        let m_hat = m / (1.0 - B1.powi(k));
        let v_hat = v / (1.0 - B2.powi(k));
        let lr = schedule.lr(step);
        e -= m_hat.zip_map(&v_hat, |a, b| lr * a / (b.sqrt() + EPS));
    }
    e
}
