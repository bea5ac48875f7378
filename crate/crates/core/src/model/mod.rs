//! The temporal sequence model: chunk encoder, causal context layer,
//! masked label attention and per-position label probabilities.

mod causal;
mod config;
mod label_attention;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use causal::causal_attend;
pub use config::ModelConfig;
pub use label_attention::{label_attend, label_attend_all, predict};
pub use params::{Bound, Params};

use crate::corpus::{Category, Chunk, ChunkSequence};
use crate::encoder::{ChunkEncoder, MeanPoolEncoder};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Probability matrix `[N, L]`, one row per temporal position.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalPredictions {
    pub probs: Tensor,
    pub categories: Vec<Category>,
    pub positions: Vec<usize>,
}

impl TemporalPredictions {
    /// Zero-row marker for an empty input sequence.
    pub fn empty(num_labels: usize) -> Self {
        Self {
            probs: Tensor::zeros(&[0, num_labels]),
            categories: Vec::new(),
            positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Probabilities at 0-based position `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }
}

/// Label-attention weights recorded during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelAttentionTrace {
    /// One `[N, L, N]` tensor per head: position, label, attended position.
    pub heads: Vec<Tensor>,
    pub categories: Vec<Category>,
}

impl LabelAttentionTrace {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Weights of `head` for `label` at 0-based position `t`.
    pub fn weights(&self, head: usize, t: usize, label: usize) -> &[f64] {
        let w = &self.heads[head];
        let (l, n) = (w.shape()[1], w.shape()[2]);
        let start = (t * l + label) * n;
        &w.data()[start..start + n]
    }

    /// Weights at position `t` averaged over heads and labels.
    pub fn mean_weights(&self, t: usize) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        let Some(first) = self.heads.first() else { return out };
        let labels = first.shape()[1];
        for h in 0..self.heads.len() {
            for l in 0..labels {
                for (o, w) in out.iter_mut().zip(self.weights(h, t, l)) {
                    *o += w;
                }
            }
        }
        let k = (self.heads.len() * labels) as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

/// Everything a single forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub predictions: TemporalPredictions,
    /// Context embeddings `[N, D]`.
    pub context: Tensor,
    pub trace: LabelAttentionTrace,
}

/// Tape handles of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub embeddings: Var,
    pub context: Var,
    pub label_embeddings: Var,
    pub probs: Var,
    pub attention: Vec<Var>,
}

/// Label-attentive hierarchical sequence transformer.
#[derive(Clone, Debug)]
pub struct Lahst<E: ChunkEncoder = MeanPoolEncoder> {
    pub config: ModelConfig,
    pub encoder: E,
    pub params: Params,
}

impl Lahst<MeanPoolEncoder> {
    /// Freshly initialized model with the default encoder.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let encoder = MeanPoolEncoder {
            vocab_size: config.vocab_size,
            dim: config.dim,
            category_embedding: config.category_embedding,
        };
        Self::with_encoder(config, encoder, seed)
    }
}

impl<E: ChunkEncoder> Lahst<E> {
    pub fn with_encoder(config: ModelConfig, encoder: E, seed: u64) -> Result<Self> {
        config.validate()?;
        if encoder.dim() != config.dim {
            return Err(Error::Config(format!(
                "encoder width {} differs from model dim {}",
                encoder.dim(),
                config.dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        encoder.init_params(&mut params, &mut rng);
        causal::init(&config, &mut params, &mut rng);
        label_attention::init(&config, &mut params, &mut rng);
        Ok(Self {
            config,
            encoder,
            params,
        })
    }

    /// Replaces parameters, checking names and shapes against the current set.
    pub fn set_params(&mut self, params: Params) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                params.len()
            )));
        }
        for (name, t) in self.params.iter() {
            let other = params.get(name)?;
            if other.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    t.shape(),
                    other.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Encoder followed by the causal layer; returns `h` for `chunks`.
    pub fn context_on_tape(&self, tape: &mut Tape, p: &Bound, chunks: &[Chunk]) -> Result<(Var, Var)> {
        let e = self.encoder.encode(tape, p, chunks)?;
        let h = causal_attend(&self.config, tape, p, e)?;
        Ok((e, h))
    }

    /// Label attention over all positions and the output layer.
    pub fn heads_on_tape(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<(Var, Var, Vec<Var>)> {
        let (d, weights) = label_attend_all(&self.config, tape, p, h)?;
        let probs = predict(tape, p, d)?;
        Ok((d, probs, weights))
    }

    /// Records the full pipeline for non-empty `chunks`.
    pub fn forward_on_tape(&self, tape: &mut Tape, p: &Bound, chunks: &[Chunk]) -> Result<ForwardVars> {
        if chunks.is_empty() {
            return Err(Error::Contract("forward over an empty sequence".into()));
        }
        let (embeddings, context) = self.context_on_tape(tape, p, chunks)?;
        let (label_embeddings, probs, attention) = self.heads_on_tape(tape, p, context)?;
        Ok(ForwardVars {
            embeddings,
            context,
            label_embeddings,
            probs,
            attention,
        })
    }

    /// Single-pass forward. An empty sequence yields the empty-predictions
    /// marker and an empty context.
    pub fn forward(&self, seq: &ChunkSequence) -> Result<ForwardOutput> {
        if seq.is_empty() {
            return Ok(ForwardOutput {
                predictions: TemporalPredictions::empty(self.config.num_labels),
                context: Tensor::zeros(&[0, self.config.dim]),
                trace: LabelAttentionTrace {
                    heads: Vec::new(),
                    categories: Vec::new(),
                },
            });
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let vars = self.forward_on_tape(&mut tape, &p, &seq.chunks)?;
        Ok(ForwardOutput {
            predictions: TemporalPredictions {
                probs: tape.value(vars.probs).clone(),
                categories: seq.categories(),
                positions: seq.chunks.iter().map(|c| c.position).collect(),
            },
            context: tape.value(vars.context).clone(),
            trace: LabelAttentionTrace {
                heads: vars.attention.iter().map(|&w| tape.value(w).clone()).collect(),
                categories: seq.categories(),
            },
        })
    }

    /// Context embeddings for `chunks` computed on a private tape.
    pub fn context(&self, chunks: &[Chunk]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let (_, h) = self.context_on_tape(&mut tape, &p, chunks)?;
        Ok(tape.value(h).clone())
    }

    /// Label attention and output layer over a fixed context `h: [N, D]`.
    pub fn label_stage(&self, h: &Tensor, categories: &[Category], positions: &[usize]) -> Result<(TemporalPredictions, LabelAttentionTrace)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let (_, probs, weights) = self.heads_on_tape(&mut tape, &p, hv)?;
        Ok((
            TemporalPredictions {
                probs: tape.value(probs).clone(),
                categories: categories.to_vec(),
                positions: positions.to_vec(),
            },
            LabelAttentionTrace {
                heads: weights.iter().map(|&w| tape.value(w).clone()).collect(),
                categories: categories.to_vec(),
            },
        ))
    }
}
