use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Inception blocks with skip paths, pooled over time, then a dense layer.
    #[default]
    Conv,
    /// One dense layer over the flattened patch.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub conv_channels: Vec<usize>,
    pub inception_kernels: Vec<usize>,
    pub window_len: usize,
    pub mlp_ratio: f64,
    pub embedding: EmbeddingKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_layers: 4,
            n_heads: 4,
            conv_channels: vec![32, 64],
            inception_kernels: vec![3, 5, 9],
            window_len: 3600,
            mlp_ratio: 4.0,
            embedding: EmbeddingKind::Conv,
        }
    }
}

/// Number of input channels of a patch (voltage, current).
pub const INPUT_CHANNELS: usize = 2;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.window_len == 0 {
            return Err(Error::Config("d_model, n_heads and window_len must be at least 1".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) || self.mlp_hidden() == 0 {
            return Err(Error::Config(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio)));
        }
        if self.embedding == EmbeddingKind::Conv {
            if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                return Err(Error::Config("conv_channels must be a non-empty list of positive counts".into()));
            }
            if self.inception_kernels.is_empty() || self.inception_kernels.iter().any(|k| k % 2 == 0) {
                return Err(Error::Config("inception_kernels must be a non-empty list of odd sizes".into()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.d_model as f64 * self.mlp_ratio).round() as usize
    }

    /// `(in, out)` channel counts of each inception block.
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let mut c_in = INPUT_CHANNELS;
        self.conv_channels
            .iter()
            .map(|&c_out| {
                let pair = (c_in, c_out);
                c_in = c_out;
                pair
            })
            .collect()
    }
}
