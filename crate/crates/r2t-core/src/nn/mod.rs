//! The trainable model: per-timestep embedding MLP, sinusoidal positional
//! encoding, one post-norm transformer encoder layer, and a linear
//! compression head to the nine normalized parameters — with forward, loss,
//! and exact gradients, generic over f32 (training) and f64 (checking).

mod adam;
mod loss;
mod model;
mod pe;
mod scalar;
mod weights;

pub use adam::{
    clip_global_norm, cosine_lr, AdamConfig, AdamState, DEFAULT_EPOCHS, DEFAULT_LR0,
    DEFAULT_LR_MIN,
};
pub use loss::{
    combine_breakdowns, decode_raw_normalized, dynamic_denominator, training_loss_and_grad,
    wrap_unit, LossBreakdown, LossOutput, TrainingBatch, SEQ_WEIGHT_HR, SEQ_WEIGHT_SPO2,
    SEQ_WEIGHT_TEMP,
};
pub use model::{
    dropout_mask, gelu, gelu_grad, layer_norm_bwd, layer_norm_fwd, softmax_rows,
    softmax_rows_bwd, ForwardPass, LnCache, Model,
};
pub use pe::positional_encoding;
pub use scalar::Scalar;
pub use weights::ModelWeights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults follow the published model size:
/// one encoder layer, 16 heads, embedding dimension 192, nine outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub in_channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub embed_hidden: usize,
    pub dropout: f64,
    pub out_params: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: crate::symbolic::SEQ_LEN,
            in_channels: crate::preprocess::INPUT_CHANNELS,
            d_model: 192,
            n_heads: 16,
            n_layers: 1,
            ffn_dim: 192,
            embed_hidden: 192,
            dropout: 0.1,
            out_params: crate::symbolic::PARAM_COUNT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(
                "d_model must be even for sin/cos positional encoding".into(),
            ));
        }
        if self.n_layers != 1 {
            return Err(Error::Config(
                "only a single encoder layer is supported".into(),
            ));
        }
        if self.seq_len == 0 || self.in_channels == 0 || self.ffn_dim == 0 || self.embed_hidden == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.out_params == 0 {
            return Err(Error::Config("out_params must be positive".into()));
        }
        Ok(())
    }

    /// Per-head dimension.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
