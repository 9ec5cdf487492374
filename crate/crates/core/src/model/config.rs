use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which branch supplies the decoder queries in the fusion module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderQuery {
    /// Query from the PSD encoder, key and value from the DE encoder.
    #[default]
    Psd,
    /// Query from the sum of both encoders, key and value from DE.
    Sum,
}

/// Output head on top of the pooled `D`-dimensional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear projection to `proj_dim`, unit-normalised, plus a learnable
    /// logit scale for matching against a text bank.
    #[default]
    Matching,
    /// Plain `classes`-way linear classifier.
    Linear { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub spatial_blocks: usize,
    pub lego_layers: usize,
    pub temporal_layers: usize,
    pub patch_conv_channels: Vec<usize>,
    pub patch_conv_strides: Vec<usize>,
    pub ffn_ratio: usize,
    pub proj_dim: usize,
    /// Initial temperature; the model learns `ln(1/τ)`.
    pub temperature: f64,
    pub decoder_query: DecoderQuery,
    pub dropout: f64,
    pub head: HeadKind,
    /// Input tensor shape `T × F × H × W`.
    pub frames: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
}

pub const MULTISCALE_KERNELS: [usize; 3] = [1, 3, 5];
pub const PATCH_KERNEL: usize = 3;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            heads: 4,
            spatial_blocks: 1,
            lego_layers: 1,
            temporal_layers: 1,
            patch_conv_channels: vec![16, 32, 64, 64],
            patch_conv_strides: vec![2, 2, 2, 1],
            ffn_ratio: 2,
            proj_dim: 64,
            temperature: 0.07,
            decoder_query: DecoderQuery::Psd,
            dropout: 0.0,
            head: HeadKind::Matching,
            frames: 5,
            bands: 6,
            height: 32,
            width: 32,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and quick experiments.
    pub fn toy() -> Self {
        Self {
            embed_dim: 8,
            heads: 2,
            patch_conv_channels: vec![4, 8, 8, 8],
            patch_conv_strides: vec![2, 2, 2, 1],
            proj_dim: 16,
            height: 16,
            width: 16,
            ..Self::default()
        }
    }

    /// Token grid side after the patch convolutions.
    pub fn token_grid(&self) -> (usize, usize) {
        let mut h = self.height;
        let mut w = self.width;
        for &s in &self.patch_conv_strides {
            h = (h + 2 * (PATCH_KERNEL / 2) - PATCH_KERNEL) / s + 1;
            w = (w + 2 * (PATCH_KERNEL / 2) - PATCH_KERNEL) / s + 1;
        }
        (h, w)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(field, reason));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(
                "embed_dim",
                format!("{} is not divisible by heads = {}", self.embed_dim, self.heads),
            );
        }
        if self.patch_conv_channels.len() != 4 || self.patch_conv_strides.len() != 4 {
            return bad("patch_conv_channels", "exactly four patch convolution stages are required".into());
        }
        if self.patch_conv_channels.last() != Some(&self.embed_dim) {
            return bad("patch_conv_channels", "last stage must output embed_dim channels".into());
        }
        if self.patch_conv_channels.contains(&0) || self.patch_conv_strides.contains(&0) {
            return bad("patch_conv_strides", "channels and strides must be positive".into());
        }
        let prod: usize = self.patch_conv_strides.iter().product();
        if self.height % prod != 0 || self.width % prod != 0 {
            return bad(
                "patch_conv_strides",
                format!("stride product {prod} must divide {}×{}", self.height, self.width),
            );
        }
        let (th, tw) = self.token_grid();
        if th != tw {
            return bad("height", format!("token grid {th}×{tw} is not square"));
        }
        if self.frames == 0 || self.bands == 0 {
            return bad("frames", "frames and bands must be positive".into());
        }
        if self.ffn_ratio == 0 || self.proj_dim == 0 {
            return bad("ffn_ratio", "ffn_ratio and proj_dim must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)".into());
        }
        if let HeadKind::Linear { classes } = self.head {
            if classes < 2 {
                return bad("head", "a linear head needs at least two classes".into());
            }
        }
        Ok(())
    }
}
