use crate::error::{Error, Result};

/// Shape of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale default: trains in minutes on one CPU core.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 4,
            ff_size: 128,
            vocab_size,
            max_len: 32,
            dropout: 0.0,
        }
    }

    /// Four layers, hidden size 512, as used for full-scale experiments.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 4,
            hidden_size: 512,
            num_heads: 8,
            ff_size: 2048,
            vocab_size,
            max_len: 256,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.hidden_size == 0 || self.num_heads == 0 || self.ff_size == 0 {
            return fail("hidden_size, num_heads and ff_size must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.vocab_size <= 4 {
            return fail(format!("vocab_size {} leaves no words", self.vocab_size));
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} is too small", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
