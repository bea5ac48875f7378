use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clinical note categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    DischargeSummary,
    #[serde(rename = "ECG")]
    Ecg,
    Echo,
    Nursing,
    Physician,
    Radiology,
    Respiratory,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::DischargeSummary,
        Category::Ecg,
        Category::Echo,
        Category::Nursing,
        Category::Physician,
        Category::Radiology,
        Category::Respiratory,
        Category::Other,
    ];

    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    /// Reports of diagnostic tests.
    pub fn is_diagnostic(self) -> bool {
        matches!(self, Category::Echo | Category::Radiology | Category::Ecg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::DischargeSummary => "DischargeSummary",
            Category::Ecg => "ECG",
            Category::Echo => "Echo",
            Category::Nursing => "Nursing",
            Category::Physician => "Physician",
            Category::Radiology => "Radiology",
            Category::Respiratory => "Respiratory",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown note category {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub category: Category,
    pub timestamp: NaiveDateTime,
    pub tokens: Vec<u32>,
}

/// One hospital stay: time-ordered notes ending in a single discharge
/// summary, plus the gold label set for the whole stay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientStay {
    pub stay_id: String,
    pub admission_time: NaiveDateTime,
    pub labels: Vec<u32>,
    pub notes: Vec<Note>,
}

impl PatientStay {
    /// Hours between admission and `t`.
    pub fn hours_since_admission(&self, t: NaiveDateTime) -> f64 {
        (t - self.admission_time).num_seconds() as f64 / 3600.0
    }

    /// Dense 0/1 indicator of the gold labels.
    pub fn label_vector(&self, num_labels: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_labels];
        for &l in &self.labels {
            if (l as usize) < num_labels {
                y[l as usize] = 1.0;
            }
        }
        y
    }
}

/// A note as it appears in an input file, before preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub note_id: String,
    pub category: Category,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawStay {
    pub stay_id: String,
    pub admission_time: String,
    pub labels: Vec<u32>,
    pub notes: Vec<RawNote>,
}

impl From<&PatientStay> for RawStay {
    fn from(stay: &PatientStay) -> Self {
        RawStay {
            stay_id: stay.stay_id.clone(),
            admission_time: format_timestamp(stay.admission_time),
            labels: stay.labels.clone(),
            notes: stay
                .notes
                .iter()
                .map(|n| RawNote {
                    note_id: n.note_id.clone(),
                    category: n.category,
                    timestamp: Some(format_timestamp(n.timestamp)),
                    tokens: n.tokens.clone(),
                })
                .collect(),
        }
    }
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// A window of at most `T` tokens cut from one note.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub tokens: Vec<u32>,
    pub note_id: String,
    pub category: Category,
    pub timestamp: NaiveDateTime,
    /// Index of this chunk in the stay's full chunk sequence.
    pub position: usize,
}

/// Ordered chunks of one stay; the model's temporal axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSequence {
    pub stay_id: String,
    pub admission_time: NaiveDateTime,
    pub chunks: Vec<Chunk>,
}

impl ChunkSequence {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    fn with_chunks(&self, chunks: Vec<Chunk>) -> ChunkSequence {
        ChunkSequence {
            stay_id: self.stay_id.clone(),
            admission_time: self.admission_time,
            chunks,
        }
    }

    /// Sub-sequence at the given (ascending) indices.
    pub fn select(&self, indices: &[usize]) -> ChunkSequence {
        self.with_chunks(indices.iter().map(|&i| self.chunks[i].clone()).collect())
    }

    /// Consecutive chunks `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ChunkSequence {
        self.with_chunks(self.chunks[range].to_vec())
    }

    /// The final `n` chunks (or all of them).
    pub fn last(&self, n: usize) -> ChunkSequence {
        let start = self.len().saturating_sub(n);
        self.slice(start..self.len())
    }

    pub fn token_lists(&self) -> Vec<Vec<u32>> {
        self.chunks.iter().map(|c| c.tokens.clone()).collect()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.chunks.iter().map(|c| c.category).collect()
    }
}

/// A chunked stay with its gold label set.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub seq: ChunkSequence,
    pub labels: Vec<u32>,
}

impl LabeledSequence {
    pub fn from_stay(stay: &PatientStay, tokens_per_chunk: usize) -> Result<Self> {
        Ok(Self {
            seq: super::chunking::chunk_stay(stay, tokens_per_chunk)?,
            labels: stay.labels.clone(),
        })
    }

    /// 0/1 indicator vector over `num_labels` labels.
    pub fn gold(&self, num_labels: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_labels];
        for &l in &self.labels {
            y[l as usize] = 1.0;
        }
        y
    }
}

/// Rule restricting which chunks are visible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutoffSpec {
    /// Notes written no later than this many hours after admission.
    HoursSinceAdmission(f64),
    /// Everything except the discharge summary.
    ExcludeDischargeSummary,
    FullSequence,
}

impl CutoffSpec {
    pub fn hours(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Validation(format!(
                "cutoff hours must be positive, got {h}"
            )));
        }
        Ok(CutoffSpec::HoursSinceAdmission(h))
    }

    pub fn label(&self) -> String {
        match self {
            CutoffSpec::HoursSinceAdmission(h) => format!("0-{h:.1}h"),
            CutoffSpec::ExcludeDischargeSummary => "excl-ds".to_string(),
            CutoffSpec::FullSequence => "full".to_string(),
        }
    }
}

impl fmt::Display for CutoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
