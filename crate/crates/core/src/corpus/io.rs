//! JSON-lines dataset files: one stay per line, LF terminated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::types::{PatientStay, RawStay};
use crate::error::{Error, Result};

/// Serializes stays exactly as written to disk.
pub fn to_jsonl(stays: &[PatientStay]) -> Result<String> {
    let mut out = String::new();
    for s in stays {
        out.push_str(&serde_json::to_string(&RawStay::from(s))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, stays: &[PatientStay]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_jsonl(stays)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads raw records; blank lines are skipped.
pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawStay>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawStay = serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(raw);
    }
    Ok(out)
}

/// Reads and ingests a dataset file. Stays excluded by the preprocessing
/// rules are skipped with a warning; any other invalid record is an error.
pub fn read_corpus(path: &Path, vocab_size: usize, num_labels: usize) -> Result<Vec<PatientStay>> {
    let raws = read_raw_jsonl(path)?;
    let (stays, rejected) = super::preprocess::ingest_all(&raws, vocab_size, num_labels);
    for e in rejected {
        match e {
            Error::Rejected { stay_id, reason } => {
                log::warn!("{}: excluded stay {stay_id} ({reason})", path.display())
            }
            other => return Err(other),
        }
    }
    Ok(stays)
}
