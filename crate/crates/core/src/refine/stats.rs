/// Running per-splat maximum of screen-space positional gradient magnitudes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxGradStat {
    max: Vec<f64>,
    seen: Vec<u32>,
}

impl MaxGradStat {
    pub fn new(splats: usize) -> Self {
        Self {
            max: vec![0.0; splats],
            seen: vec![0; splats],
        }
    }

    pub fn observe(&mut self, splat: usize, magnitude: f64) {
        if self.seen[splat] == 0 || magnitude > self.max[splat] {
            self.max[splat] = magnitude;
        }
        self.seen[splat] += 1;
    }

    /// Maximum so far, `None` for splats never observed.
    pub fn get(&self, splat: usize) -> Option<f64> {
        (self.seen[splat] > 0).then(|| self.max[splat])
    }

    pub fn observations(&self, splat: usize) -> u32 {
        self.seen[splat]
    }
}

/// Maximum of each splat's observation history.
pub fn max_grad_stat(history: &[Vec<f64>]) -> Vec<f64> {
    history
        .iter()
        .map(|h| h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}
