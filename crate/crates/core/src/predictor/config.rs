use serde::{Deserialize, Serialize};

use crate::dsp::BAND_COUNT;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub layer_count: usize,
    pub head_count: usize,
    pub ffn_dim: usize,
    /// Longest input, in frames, the positional table covers.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    /// Full-size model: 256-dimensional, 12 layers of 8 heads, 2048-wide
    /// feed-forward blocks.
    fn default() -> Self {
        Self {
            input_dim: BAND_COUNT,
            model_dim: 256,
            layer_count: 12,
            head_count: 8,
            ffn_dim: 2048,
            max_frames: 3000,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    /// Desk-scale model that trains in minutes on a CPU.
    pub fn toy() -> Self {
        Self {
            model_dim: 64,
            layer_count: 3,
            head_count: 4,
            ffn_dim: 256,
            max_frames: 1000,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.head_count
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("model_dim", self.model_dim),
            ("layer_count", self.layer_count),
            ("head_count", self.head_count),
            ("ffn_dim", self.ffn_dim),
            ("max_frames", self.max_frames),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.model_dim % self.head_count != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by head_count {}",
                self.model_dim, self.head_count
            )));
        }
        let too_big = dims.iter().find(|(_, v)| u32::try_from(*v).is_err());
        if let Some((name, _)) = too_big {
            return Err(Error::Config(format!("{name} does not fit in 32 bits")));
        }
        Ok(())
    }
}
