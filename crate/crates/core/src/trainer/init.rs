use rand::distributions::{Distribution, Uniform};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Weight initialization. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `[-1/√n_in, 1/√n_in]`.
    Heuristic,
    /// Uniform in `[-√6/√(n_in+n_out), √6/√(n_in+n_out)]`.
    Normalized,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f32 {
        match self {
            InitScheme::Heuristic => 1.0 / (fan_in as f32).sqrt(),
            InitScheme::Normalized => 6f32.sqrt() / ((fan_in + fan_out) as f32).sqrt(),
        }
    }

    pub fn fill(self, weights: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) {
        let b = self.bound(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-b, b);
        for w in weights.data_mut() {
            *w = dist.sample(rng);
        }
    }
}
