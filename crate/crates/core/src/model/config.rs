use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model dimensions and switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_labels: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub causal_layers: usize,
    pub causal_heads: usize,
    pub label_heads: usize,
    /// Feed-forward expansion factor.
    pub ffn_mult: usize,
    /// Tokens per chunk `T`.
    pub chunk_tokens: usize,
    /// Add a learned per-category embedding in the encoder.
    pub category_embedding: bool,
    /// Add a per-label bias to the output logits.
    pub output_bias: bool,
    /// Learned positional embeddings over chunk positions, if set.
    pub max_positions: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 300,
            num_labels: 20,
            dim: 32,
            causal_layers: 1,
            causal_heads: 1,
            label_heads: 1,
            ffn_mult: 4,
            chunk_tokens: 32,
            category_embedding: true,
            output_bias: true,
            max_positions: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_labels == 0 {
            return bad("num_labels must be at least 1".into());
        }
        if self.dim == 0 || self.vocab_size == 0 || self.ffn_mult == 0 {
            return bad("dim, vocab_size and ffn_mult must be positive".into());
        }
        if self.label_heads == 0 || self.dim % self.label_heads != 0 {
            return bad(format!(
                "dim {} not divisible by label_heads {}",
                self.dim, self.label_heads
            ));
        }
        if self.causal_heads == 0 || self.dim % self.causal_heads != 0 {
            return bad(format!(
                "dim {} not divisible by causal_heads {}",
                self.dim, self.causal_heads
            ));
        }
        if self.chunk_tokens < crate::corpus::MIN_CHUNK_TOKENS {
            return bad(format!("chunk_tokens {} below minimum", self.chunk_tokens));
        }
        if self.max_positions == Some(0) {
            return bad("max_positions must be positive when set".into());
        }
        Ok(())
    }
}
