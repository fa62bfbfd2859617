use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub coarse_encoder_layers: usize,
    pub coarse_decoder_layers: usize,
    pub fine_encoder_layers: usize,
    pub fine_decoder_layers: usize,
    /// Number of line entities `N`.
    pub num_entities: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Output channels of the five stride-2 convolutions; the fourth feeds
    /// the fine (stride 16) tap, the fifth the coarse (stride 32) tap.
    pub backbone_channels: [usize; 5],
    pub input_channels: usize,
    /// Append normalized x and y maps to the input of every backbone
    /// convolution.
    #[serde(default)]
    pub coord_channels: bool,
    /// Images are resized to this square extent before the backbone, so
    /// any input size is accepted. `None` requires extents that are
    /// multiples of 32.
    #[serde(default)]
    pub input_extent: Option<usize>,
}

impl Default for ModelConfig {
    /// Full-size configuration: 256 channels, 8 heads, 6 layers per stack and
    /// 1000 entities.
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            num_heads: 8,
            coarse_encoder_layers: 6,
            coarse_decoder_layers: 6,
            fine_encoder_layers: 6,
            fine_decoder_layers: 6,
            num_entities: 1000,
            ffn_dim: 2048,
            dropout: 0.1,
            backbone_channels: [32, 64, 128, 256, 256],
            input_channels: 3,
            coord_channels: false,
            input_extent: None,
        }
    }
}

impl ModelConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            num_heads: 4,
            coarse_encoder_layers: 2,
            coarse_decoder_layers: 2,
            fine_encoder_layers: 2,
            fine_decoder_layers: 2,
            num_entities: 50,
            ffn_dim: 128,
            dropout: 0.0,
            backbone_channels: [16, 32, 64, 128, 128],
            input_channels: 3,
            coord_channels: true,
            input_extent: None,
        }
    }

    pub fn num_decoder_layers(&self) -> usize {
        self.coarse_decoder_layers + self.fine_decoder_layers
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!("d_model {} must be a positive multiple of num_heads {}", self.d_model, self.num_heads));
        }
        if !self.d_model.is_multiple_of(4) {
            return bad(format!("d_model {} must be divisible by 4", self.d_model));
        }
        if self.num_entities == 0 {
            return bad("num_entities must be at least 1".into());
        }
        if self.coarse_decoder_layers == 0 {
            return bad("at least one coarse decoder layer is required".into());
        }
        if self.ffn_dim == 0 || self.input_channels == 0 || self.backbone_channels.contains(&0) {
            return bad("ffn_dim, input_channels and backbone channels must be positive".into());
        }
        if let Some(e) = self.input_extent {
            if e == 0 || e % 32 != 0 {
                return bad(format!("input_extent {e} must be a positive multiple of 32"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
