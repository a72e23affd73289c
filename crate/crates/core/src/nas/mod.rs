//! Bounded evolutionary architecture search.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, so search histories reproduce across platforms.

mod dataset;
mod proxy;
mod search;

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::Dataset;
pub use proxy::{proxy_evaluate, Mlp, ProxyConfig};
pub use search::{
    read_history, search, write_history, Candidate, ConstantEvaluator, Evaluation, Evaluator,
    NasConfig, ParamCountEvaluator, ProxyEvaluator, SearchOutcome,
};

/// Hidden-layer widths, input side first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Architecture {
    pub widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Self {
        Self { widths }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Weights and biases of the layer stack fed by `n_inputs` features.
    pub fn param_count(&self, n_inputs: usize) -> usize {
        let mut prev = n_inputs;
        self.widths
            .iter()
            .map(|&w| {
                let p = prev * w + w;
                prev = w;
                p
            })
            .sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        write!(f, "[{}]", w.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            depths: vec![3, 4, 5, 6],
            widths: vec![16, 32, 64, 128],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.widths.is_empty() {
            return Err(Error::InvalidSearch(
                "search space needs at least one depth and one width".into(),
            ));
        }
        if self.depths.contains(&0) || self.widths.contains(&0) {
            return Err(Error::InvalidSearch(
                "depths and widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `sum over depths L of |widths|^L`.
    pub fn size(&self) -> u128 {
        self.depths
            .iter()
            .map(|&d| (self.widths.len() as u128).pow(d as u32))
            .sum()
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        self.depths.contains(&arch.depth()) && arch.widths.iter().all(|w| self.widths.contains(w))
    }

    /// Every architecture once: depths in listed order, widths as an odometer
    /// with the last layer changing fastest.
    pub fn iter(&self) -> impl Iterator<Item = Architecture> + '_ {
        self.depths.iter().flat_map(move |&depth| {
            let n = self.widths.len();
            let total = n.pow(depth as u32);
            (0..total).map(move |mut index| {
                let mut widths = vec![0; depth];
                for slot in widths.iter_mut().rev() {
                    *slot = self.widths[index % n];
                    index /= n;
                }
                Architecture::new(widths)
            })
        })
    }

    /// Depth uniform over `depths`, then each width uniform over `widths`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Architecture {
        let depth = *self.depths.choose(rng).expect("non-empty depths");
        Architecture::new(
            (0..depth)
                .map(|_| *self.widths.choose(rng).expect("non-empty widths"))
                .collect(),
        )
    }

    /// Resamples each width independently with probability `p`; depth is kept.
    pub fn mutate<R: Rng>(&self, arch: &Architecture, p: f64, rng: &mut R) -> Architecture {
        let widths = arch
            .widths
            .iter()
            .map(|&w| {
                if rng.gen_bool(p) {
                    *self.widths.choose(rng).expect("non-empty widths")
                } else {
                    w
                }
            })
            .collect();
        Architecture::new(widths)
    }
}

/// Number of architectures in `space` found by walking it.
pub fn enumerate_space(space: &SearchSpace) -> usize {
    space.iter().count()
}
