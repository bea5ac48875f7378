//! Stays, notes and chunks; preprocessing rules; temporal cutoffs; and the
//! synthetic corpus generator.

mod chunking;
pub mod io;
mod preprocess;
pub mod synth;
mod types;

pub use chunking::{
    chunk_stay, truncate_to_cutoff, volume_percentile_cutoffs, VolumeWeighting, MIN_CHUNK_TOKENS,
};
pub use preprocess::{
    enforce_terminal_discharge, ingest, ingest_all, normalize_timestamps, parse_timestamp,
    sort_notes, validate,
};
pub use synth::{generate_corpus, SynthConfig};
use crate::error::Result;

pub use types::{
    format_timestamp, Category, Chunk, ChunkSequence, CutoffSpec, LabeledSequence, Note, PatientStay, RawNote,
    RawStay,
};

/// Fraction of stays carrying each label.
pub fn label_prior(corpus: &[PatientStay], num_labels: usize) -> Vec<f64> {
    let mut prior = vec![0.0; num_labels];
    if corpus.is_empty() {
        return prior;
    }
    for s in corpus {
        for &l in &s.labels {
            if let Some(p) = prior.get_mut(l as usize) {
                *p += 1.0;
            }
        }
    }
    let n = corpus.len() as f64;
    prior.iter_mut().for_each(|p| *p /= n);
    prior
}

/// Chunks every stay with `tokens_per_chunk` tokens per chunk.
pub fn chunk_corpus(corpus: &[PatientStay], tokens_per_chunk: usize) -> Result<Vec<LabeledSequence>> {
    corpus.iter().map(|s| LabeledSequence::from_stay(s, tokens_per_chunk)).collect()
}
