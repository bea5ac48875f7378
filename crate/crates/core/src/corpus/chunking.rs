use super::types::{Category, Chunk, ChunkSequence, CutoffSpec, PatientStay};
use crate::error::{Error, Result};

pub const MIN_CHUNK_TOKENS: usize = 8;

/// Splits each note into consecutive windows of `tokens_per_chunk` tokens.
/// Only the last window of a note may be shorter.
pub fn chunk_stay(stay: &PatientStay, tokens_per_chunk: usize) -> Result<ChunkSequence> {
    if tokens_per_chunk < MIN_CHUNK_TOKENS {
        return Err(Error::Config(format!(
            "tokens per chunk must be at least {MIN_CHUNK_TOKENS}, got {tokens_per_chunk}"
        )));
    }
    let mut chunks = Vec::new();
    for note in &stay.notes {
        if note.tokens.is_empty() {
            log::debug!("stay {}: note {} is empty", stay.stay_id, note.note_id);
            continue;
        }
        for window in note.tokens.chunks(tokens_per_chunk) {
            chunks.push(Chunk {
                tokens: window.to_vec(),
                note_id: note.note_id.clone(),
                category: note.category,
                timestamp: note.timestamp,
                position: chunks.len(),
            });
        }
    }
    Ok(ChunkSequence {
        stay_id: stay.stay_id.clone(),
        admission_time: stay.admission_time,
        chunks,
    })
}

/// Keeps the chunks visible under `cutoff`. Chunks are time ordered, so the
/// result of an hour cutoff is always a prefix.
pub fn truncate_to_cutoff(seq: &ChunkSequence, cutoff: CutoffSpec) -> ChunkSequence {
    let keep: Vec<_> = match cutoff {
        CutoffSpec::FullSequence => return seq.clone(),
        CutoffSpec::ExcludeDischargeSummary => seq
            .chunks
            .iter()
            .filter(|c| c.category != Category::DischargeSummary)
            .cloned()
            .collect(),
        CutoffSpec::HoursSinceAdmission(h) => seq
            .chunks
            .iter()
            .take_while(|c| {
                (c.timestamp - seq.admission_time).num_seconds() as f64 <= h * 3600.0
            })
            .cloned()
            .collect(),
    };
    ChunkSequence {
        stay_id: seq.stay_id.clone(),
        admission_time: seq.admission_time,
        chunks: keep,
    }
}

/// How notes are weighted when pooling elapsed times.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeWeighting {
    #[default]
    NoteCount,
    TokenCount,
}

/// Elapsed hours below which the given fraction of all notes in the corpus
/// falls, interpolating linearly between order statistics.
pub fn volume_percentile_cutoffs(
    corpus: &[PatientStay],
    percentiles: &[f64],
    weighting: VolumeWeighting,
) -> Result<Vec<f64>> {
    if let Some(p) = percentiles.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Validation(format!("percentile {p} outside (0, 1)")));
    }
    let mut elapsed: Vec<(f64, f64)> = corpus
        .iter()
        .flat_map(|s| {
            s.notes.iter().map(move |n| {
                let w = match weighting {
                    VolumeWeighting::NoteCount => 1.0,
                    VolumeWeighting::TokenCount => n.tokens.len() as f64,
                };
                (s.hours_since_admission(n.timestamp), w)
            })
        })
        .collect();
    if elapsed.is_empty() {
        return Err(Error::Validation("percentiles of an empty corpus".into()));
    }
    elapsed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(match weighting {
        VolumeWeighting::NoteCount => {
            let n = elapsed.len();
            percentiles
                .iter()
                .map(|&p| {
                    let pos = p * (n - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(n - 1);
                    let frac = pos - lo as f64;
                    elapsed[lo].0 + (elapsed[hi].0 - elapsed[lo].0) * frac
                })
                .collect()
        }
        VolumeWeighting::TokenCount => {
            let total: f64 = elapsed.iter().map(|e| e.1).sum();
            percentiles
                .iter()
                .map(|&p| {
                    let target = p * total;
                    let mut cum = 0.0;
                    for &(t, w) in &elapsed {
                        cum += w;
                        if cum >= target {
                            return t;
                        }
                    }
                    elapsed.last().unwrap().0
                })
                .collect()
        }
    })
}
