use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::N_SPECIAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    /// 4 encoder and 4 decoder layers with 4 heads each: a 4×4 head grid.
    fn default() -> Self {
        ModelConfig {
            vocab_size: 256,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 4,
            n_dec_layers: 4,
            d_ff: 128,
            max_positions: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.vocab_size < N_SPECIAL {
            return Err(Error::Config(format!(
                "vocab_size must be at least {N_SPECIAL} (pad, bos, eos, unk)"
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_head(), 16);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_tiny_vocab_and_zero_counts() {
        let c = ModelConfig {
            vocab_size: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            n_dec_layers: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
