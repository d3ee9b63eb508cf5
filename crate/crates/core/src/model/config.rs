use serde::{Deserialize, Serialize};

use crate::dataset::{CROP_PX, N_CHANNELS, N_CLIMATE};
use crate::error::{param_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Depth of both the image encoder and the context encoder.
    pub n_layers: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    /// Edge of one spatial patch; (crop_px / patch_px)² patches per timestep.
    pub patch_px: usize,
    pub crop_px: usize,
    pub timesteps: usize,
    pub n_channels: usize,
    pub n_met: usize,
    pub vocab_size: usize,
    pub max_context_len: usize,
}

impl Default for ModelConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            mlp_hidden: 128,
            dropout: 0.3,
            patch_px: 8,
            crop_px: CROP_PX,
            timesteps: 15,
            n_channels: N_CHANNELS,
            n_met: N_CLIMATE,
            vocab_size: crate::context::VOCAB_SIZE,
            max_context_len: 32,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration: 768-wide, 8 heads, 6 layers, 2048 MLP.
    pub fn full_scale() -> Self {
        Self {
            d_model: 768,
            n_heads: 8,
            n_layers: 6,
            mlp_hidden: 2048,
            max_context_len: 128,
            ..Self::default()
        }
    }

    /// Smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            mlp_hidden: 16,
            dropout: 0.0,
            timesteps: 3,
            vocab_size: 64,
            max_context_len: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(param_err!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.patch_px == 0 || self.crop_px % self.patch_px != 0 {
            return Err(param_err!("patch_px {} must divide crop_px {}", self.patch_px, self.crop_px));
        }
        if self.timesteps == 0 || self.n_layers == 0 || self.mlp_hidden == 0 {
            return Err(param_err!("timesteps, n_layers and mlp_hidden must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(param_err!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < 3 || self.max_context_len == 0 {
            return Err(param_err!("vocab_size must be ≥ 3 and max_context_len ≥ 1"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Patches per timestep.
    pub fn patches_per_step(&self) -> usize {
        (self.crop_px / self.patch_px).pow(2)
    }

    /// Sequence length including the CLS token.
    pub fn seq_len(&self) -> usize {
        self.timesteps * self.patches_per_step() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.n_channels * self.patch_px * self.patch_px
    }
}

/// Which auxiliary modalities feed the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub use_climate: bool,
    pub use_context: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::FULL
    }
}

impl ModalityMask {
    pub const FULL: Self = Self {
        use_climate: true,
        use_context: true,
    };
    pub const NO_CONTEXT: Self = Self {
        use_climate: true,
        use_context: false,
    };
    pub const NO_CLIMATE: Self = Self {
        use_climate: false,
        use_context: true,
    };
    pub const IMAGE_ONLY: Self = Self {
        use_climate: false,
        use_context: false,
    };
}
