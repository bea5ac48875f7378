//! Chunk encoders: one embedding row per chunk.
//!
//! The model only relies on the [`ChunkEncoder`] contract, an `[N, D]`
//! matrix with rows in chunk order, so any encoder producing that shape can
//! be substituted for the default mean-pooling encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Category, Chunk, ChunkSequence};
use crate::error::{Error, Result};
use crate::model::{Bound, Params};
use crate::numerics::{Tape, Tensor, Var};

pub trait ChunkEncoder {
    /// Output embedding width.
    fn dim(&self) -> usize;

    /// Adds this encoder's parameters to `params`.
    fn init_params(&self, params: &mut Params, rng: &mut ChaCha8Rng);

    /// Records the encoding of `chunks` on `tape`; returns `[chunks.len(), dim]`.
    fn encode(&self, tape: &mut Tape, params: &Bound, chunks: &[Chunk]) -> Result<Var>;
}

/// Mean of learned token embeddings, plus an optional learned category
/// embedding, followed by one linear layer and `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoolEncoder {
    pub vocab_size: usize,
    pub dim: usize,
    pub category_embedding: bool,
}

impl ChunkEncoder for MeanPoolEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn init_params(&self, params: &mut Params, rng: &mut ChaCha8Rng) {
        params.init_uniform("enc.tok", &[self.vocab_size, self.dim], 0.1, rng);
        if self.category_embedding {
            params.init_uniform("enc.cat", &[Category::COUNT, self.dim], 0.1, rng);
        }
        params.init_linear("enc.w", self.dim, self.dim, rng);
        params.insert("enc.b", Tensor::zeros(&[self.dim]));
    }

    fn encode(&self, tape: &mut Tape, params: &Bound, chunks: &[Chunk]) -> Result<Var> {
        if chunks.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[0, self.dim])));
        }
        let tokens: Vec<Vec<u32>> = chunks.iter().map(|c| c.tokens.clone()).collect();
        let mut x = tape.embed_mean(params.get("enc.tok")?, &tokens)?;
        if self.category_embedding {
            let idx: Vec<usize> = chunks.iter().map(|c| c.category.index()).collect();
            let cat = tape.gather_rows(params.get("enc.cat")?, &idx)?;
            x = tape.add(x, cat)?;
        }
        let y = tape.matmul(x, params.get("enc.w")?)?;
        let y = tape.add_bias(y, params.get("enc.b")?)?;
        Ok(tape.tanh(y))
    }
}

/// Parameter-free encoder: a fixed random projection of the token
/// histogram. Useful for checking that the sequence model does not depend
/// on encoder internals.
#[derive(Clone, Debug)]
pub struct RandomProjectionEncoder {
    projection: Tensor,
}

impl RandomProjectionEncoder {
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..vocab_size * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self {
            projection: Tensor::new(vec![vocab_size, dim], data).unwrap(),
        }
    }
}

impl ChunkEncoder for RandomProjectionEncoder {
    fn dim(&self) -> usize {
        self.projection.shape()[1]
    }

    fn init_params(&self, _params: &mut Params, _rng: &mut ChaCha8Rng) {}

    fn encode(&self, tape: &mut Tape, _params: &Bound, chunks: &[Chunk]) -> Result<Var> {
        let dim = self.dim();
        let vocab = self.projection.shape()[0];
        let mut out = Vec::with_capacity(chunks.len() * dim);
        for c in chunks {
            let mut row = vec![0.0; dim];
            for &t in &c.tokens {
                if t as usize >= vocab {
                    return Err(Error::Validation(format!("token id {t} outside vocabulary of {vocab}")));
                }
                for (r, p) in row.iter_mut().zip(self.projection.row(t as usize)) {
                    *r += p;
                }
            }
            let n = c.tokens.len().max(1) as f64;
            out.extend(row.iter().map(|v| (v / n).tanh()));
        }
        Ok(tape.constant(Tensor::new(vec![chunks.len(), dim], out)?))
    }
}

/// Encodes a whole sequence with constant parameters; returns `[N, D]`.
pub fn encode_chunks<E: ChunkEncoder + ?Sized>(
    encoder: &E,
    params: &Params,
    seq: &ChunkSequence,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let e = encoder.encode(&mut tape, &bound, &seq.chunks)?;
    Ok(tape.value(e).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck;
    use chrono::NaiveDate;

    fn chunk(tokens: Vec<u32>, cat: Category) -> Chunk {
        Chunk {
            tokens,
            note_id: "n".into(),
            category: cat,
            timestamp: NaiveDate::from_ymd_opt(2100, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            position: 0,
        }
    }

    fn seq(chunks: Vec<Chunk>) -> ChunkSequence {
        ChunkSequence {
            stay_id: "S".into(),
            admission_time: chunks.first().map(|c| c.timestamp).unwrap_or_default(),
            chunks,
        }
    }

    fn setup() -> (MeanPoolEncoder, Params) {
        let enc = MeanPoolEncoder { vocab_size: 12, dim: 6, category_embedding: true };
        let mut p = Params::new();
        enc.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        (enc, p)
    }

    #[test]
    fn repeated_token_equals_single_token() {
        let (enc, p) = setup();
        let a = encode_chunks(&enc, &p, &seq(vec![chunk(vec![4, 4, 4, 4], Category::Echo)])).unwrap();
        let b = encode_chunks(&enc, &p, &seq(vec![chunk(vec![4], Category::Echo)])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn empty_sequence_gives_empty_matrix() {
        let (enc, p) = setup();
        let e = encode_chunks(&enc, &p, &seq(vec![])).unwrap();
        assert_eq!(e.shape(), &[0, 6]);
    }

    #[test]
    fn unknown_token_rejected() {
        let (enc, p) = setup();
        assert!(encode_chunks(&enc, &p, &seq(vec![chunk(vec![12], Category::Echo)])).is_err());
    }

    #[test]
    fn token_order_within_chunk_is_irrelevant() {
        let (enc, p) = setup();
        let a = encode_chunks(&enc, &p, &seq(vec![chunk(vec![1, 5, 9, 2], Category::Nursing)])).unwrap();
        let b = encode_chunks(&enc, &p, &seq(vec![chunk(vec![9, 2, 5, 1], Category::Nursing)])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn category_changes_embedding() {
        let (enc, p) = setup();
        let a = encode_chunks(&enc, &p, &seq(vec![chunk(vec![1, 2], Category::Nursing)])).unwrap();
        let b = encode_chunks(&enc, &p, &seq(vec![chunk(vec![1, 2], Category::Echo)])).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn gradient_through_encoder() {
        let (enc, p) = setup();
        let chunks = vec![
            chunk(vec![0, 3, 3, 7], Category::Echo),
            chunk(vec![11, 2], Category::DischargeSummary),
            chunk(vec![5], Category::Nursing),
        ];
        let names = p.names();
        let inputs: Vec<(String, Tensor)> = p.iter().map(|(k, t)| (k.clone(), t.clone())).collect();
        let report = gradcheck::check(&inputs, 1e-5, 1e-6, |tape, vars| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let e = enc.encode(tape, &bound, &chunks)?;
            let sq = tape.mul(e, e)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
