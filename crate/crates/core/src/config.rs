//! Hyperparameters shared by view construction and training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How [`crate::wavelet::sparsify`] decides which entries to drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Drop entries with `|v| < epsilon`.
    #[default]
    Absolute,
    /// Drop entries with `v < epsilon`, which also removes every negative entry.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// One GCN shared by every view.
    #[default]
    Shared,
    /// A separate GCN per view.
    Dedicated,
}

/// Normalization of the summed binary cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScaling {
    /// Mean over all `2·N·V·(V−1)` terms.
    #[default]
    Mean,
    /// Sum of all terms divided by `N + V`.
    NodesPlusViews,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Column mean over nodes.
    #[default]
    Mean,
    /// Sigmoid of the column mean.
    SigmoidMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of wavelet filters / views.
    pub k: usize,
    /// Laziness of the diffusion operator.
    pub alpha: f64,
    /// Sparsification threshold applied to each filter.
    pub epsilon: f64,
    pub threshold_mode: ThresholdMode,
    /// Prepend the column-normalized adjacency as an extra view.
    pub include_local_adjacency: bool,
    pub encoder_mode: EncoderMode,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum loss decrease that resets the patience counter.
    pub min_delta: f64,
    pub loss_scaling: LossScaling,
    pub readout: Readout,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 3,
            alpha: 0.2,
            epsilon: 1e-4,
            threshold_mode: ThresholdMode::Absolute,
            include_local_adjacency: false,
            encoder_mode: EncoderMode::Shared,
            embed_dim: 512,
            proj_dim: 512,
            lr: 0.001,
            max_epochs: 2000,
            patience: 20,
            min_delta: 1e-5,
            loss_scaling: LossScaling::Mean,
            readout: Readout::Mean,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Total number of views fed to the encoder.
    pub fn n_views(&self) -> usize {
        self.k + usize::from(self.include_local_adjacency)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("k", "at least one filter is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("epsilon", "must be a finite value >= 0"));
        }
        if self.embed_dim < 1 {
            return Err(Error::validation("embed_dim", "must be >= 1"));
        }
        if self.proj_dim < 1 {
            return Err(Error::validation("proj_dim", "must be >= 1"));
        }
        if self.proj_dim != self.embed_dim {
            return Err(Error::validation(
                "proj_dim",
                format!(
                    "the dot-product discriminator needs proj_dim == embed_dim ({} != {})",
                    self.proj_dim, self.embed_dim
                ),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", "must be a finite value > 0"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::validation(
                "patience",
                format!("{} exceeds max_epochs {}", self.patience, self.max_epochs),
            ));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::validation("min_delta", "must be >= 0"));
        }
        Ok(())
    }
}
