use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookInit {
    /// Level-by-level k-means (k-means++ seeding) on encoded residuals.
    Kmeans,
    /// Uniform in `[-1/K, 1/K]`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub levels: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Commitment weight on the encoder side of the quantization loss.
    pub alpha: f64,
    pub encoder_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub codebook_init: CodebookInit,
    pub kmeans_iterations: usize,
    /// Replace codes unused for a whole epoch with a residual from the last
    /// batch.
    pub reseed_dead_codes: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            codebook_size: 256,
            code_dim: 32,
            alpha: 0.25,
            encoder_hidden: vec![512, 128],
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 100,
            seed: 42,
            codebook_init: CodebookInit::Kmeans,
            kmeans_iterations: 10,
            reseed_dead_codes: true,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("quantizer.{name}"), "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("levels", self.levels)?;
        positive("codebook_size", self.codebook_size)?;
        positive("code_dim", self.code_dim)?;
        positive("batch_size", self.batch_size)?;
        if self.levels > 26 {
            return Err(Error::config("quantizer.levels", "at most 26 levels are supported"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("quantizer.alpha", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("quantizer.learning_rate", "must be positive"));
        }
        if self.encoder_hidden.contains(&0) {
            return Err(Error::config(
                "quantizer.encoder_hidden",
                "layer widths must be positive",
            ));
        }
        Ok(())
    }
}
