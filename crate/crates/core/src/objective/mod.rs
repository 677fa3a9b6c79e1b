//! The averaging objective: content loss on unit embeddings, aligned local
//! style loss on Gram matrices, their blend, and Adam minimization over the
//! latent code.

mod adam;
mod encoder;
mod loss;
mod optimize;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use encoder::ContentEncoder;
pub use loss::{content_loss, style_loss, ClusterObjective, Evaluation};
pub use optimize::{optimize_average, Averaging};

use crate::alignment::AlignmentMode;
use crate::error::{Error, Result};
use crate::style::{FeatureExtractor, StyleOptions};
use crate::synthesis::{Generator, Profile, ToyGenerator};

/// The frozen networks the objective is built from.
#[derive(Clone)]
pub struct Models {
    pub generator: Arc<dyn Generator>,
    pub extractor: FeatureExtractor,
    pub encoder: ContentEncoder,
}

impl fmt::Debug for Models {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Models")
            .field("generator", &self.generator.shape())
            .field("extractor_seed", &self.extractor.seed())
            .field("encoder_seed", &self.encoder.seed())
            .finish()
    }
}

impl Models {
    /// Toy generator, extractor and encoder derived from one seed
    /// (`seed`, `seed + 1`, `seed + 2`).
    pub fn toy(seed: u64, profile: Profile) -> Self {
        let generator = ToyGenerator::new(seed, profile);
        let shape = generator.shape();
        Self {
            generator: Arc::new(generator),
            extractor: FeatureExtractor::new(
                seed.wrapping_add(1),
                shape.channels,
                FeatureExtractor::DEFAULT_CHANNELS,
            ),
            encoder: ContentEncoder::new(seed.wrapping_add(2), shape.image_dims(), ContentEncoder::DEFAULT_DIM),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the content term; `1 - lambda` weights the style term.
    pub lambda: f64,
    pub style: StyleOptions,
    pub alignment: AlignmentMode,
    /// Number of Adam iterations.
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: auto_lambda(LambdaSchedule::Aptos, 5),
            style: StyleOptions::default(),
            alignment: AlignmentMode::CosineArgmax,
            iterations: 50,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::arg(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.style.grid == 0 {
            return Err(Error::arg("grid must be >= 1"));
        }
        self.adam.validate()
    }
}

/// Per-k lambda tables for the two dataset profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSchedule {
    #[default]
    Aptos,
    Eyepacs,
}

impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aptos" => Ok(LambdaSchedule::Aptos),
            "eyepacs" => Ok(LambdaSchedule::Eyepacs),
            other => Err(Error::arg(format!(
                "unknown lambda schedule {other:?} (expected aptos or eyepacs)"
            ))),
        }
    }
}

/// Tabulated lambda for `k` in {2, 5, 10}; other `k` take the entry of the
/// nearest tabulated k (the smaller one on ties).
pub fn auto_lambda(schedule: LambdaSchedule, k: usize) -> f64 {
    let table: [(usize, f64); 3] = match schedule {
        LambdaSchedule::Aptos => [(2, 0.1), (5, 0.05), (10, 0.03)],
        LambdaSchedule::Eyepacs => [(2, 0.01), (5, 0.02), (10, 0.01)],
    };
    table
        .iter()
        .min_by_key(|(tk, _)| (tk.abs_diff(k), *tk))
        .map(|&(_, l)| l)
        .expect("table is non-empty")
}
