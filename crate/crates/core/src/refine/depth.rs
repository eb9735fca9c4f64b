use thiserror::Error;

use crate::frame::Plane;
use crate::math::median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("need at least 2 sparse depths, got {0}")]
    TooFewObservations(usize),
    #[error("monocular depth has zero spread at the sparse pixels")]
    DegenerateSpread,
    #[error("sparse depth at ({0}, {1}) lies outside the map")]
    OutOfBounds(usize, usize),
    #[error("map sizes differ")]
    DimensionMismatch,
}

/// Affine map taking monocular inverse depth to the sparse reconstruction's scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAlignment {
    /// `s(D_sfm) / s(D)`.
    pub scale_ratio: f64,
    /// `t(D_sfm) - t(D) * scale_ratio`.
    pub offset: f64,
}

impl DepthAlignment {
    pub fn apply(&self, d: f64) -> f64 {
        self.scale_ratio * d + self.offset
    }
}

/// Median and mean absolute deviation from it.
fn location_spread(v: &[f64]) -> (f64, f64) {
    let t = median(v);
    let s = v.iter().map(|x| (x - t).abs()).sum::<f64>() / v.len() as f64;
    (t, s)
}

/// Fit from the sparse samples `([x, y], inverse depth)`.
pub fn fit_depth_alignment(mono: &Plane, sparse: &[([usize; 2], f64)]) -> Result<DepthAlignment, DepthError> {
    if sparse.len() < 2 {
        return Err(DepthError::TooFewObservations(sparse.len()));
    }
    let mut at = Vec::with_capacity(sparse.len());
    for &([x, y], _) in sparse {
        if x >= mono.width || y >= mono.height {
            return Err(DepthError::OutOfBounds(x, y));
        }
        at.push(mono.get(x, y));
    }
    let target: Vec<f64> = sparse.iter().map(|s| s.1).collect();
    let (t_d, s_d) = location_spread(&at);
    let (t_s, s_s) = location_spread(&target);
    if s_d == 0.0 {
        return Err(DepthError::DegenerateSpread);
    }
    let scale_ratio = s_s / s_d;
    Ok(DepthAlignment {
        scale_ratio,
        offset: t_s - t_d * scale_ratio,
    })
}

/// Align a whole monocular inverse-depth map.
pub fn align_depth(mono: &Plane, sparse: &[([usize; 2], f64)]) -> Result<Plane, DepthError> {
    let a = fit_depth_alignment(mono, sparse)?;
    Ok(Plane {
        width: mono.width,
        height: mono.height,
        data: mono.data.iter().map(|&d| a.apply(d)).collect(),
    })
}

/// Mean absolute difference.
pub fn depth_loss(rendered: &Plane, target: &Plane) -> Result<f64, DepthError> {
    if (rendered.width, rendered.height) != (target.width, target.height) {
        return Err(DepthError::DimensionMismatch);
    }
    Ok(rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / rendered.data.len() as f64)
}

/// Exponential decay from 1 at the first step to 0.01 at the last.
pub fn depth_loss_weight(step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return 1.0;
    }
    0.01f64.powf(step as f64 / (total_steps - 1) as f64)
}
