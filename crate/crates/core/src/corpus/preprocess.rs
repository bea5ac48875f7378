//! Ingest rules: timestamp defaulting, ordering, terminal discharge summary,
//! and structural validation.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::types::{Category, Note, PatientStay, RawStay};
use crate::error::{Error, RejectReason, Result};

const DATETIME_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses a full datetime, or a bare date which is placed at 12:00:00.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in DATETIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_time(NaiveTime::from_hms_opt(12, 0, 0).unwrap()))
}

/// Resolves every note timestamp. Notes without a usable date are reported
/// together in one validation error.
pub fn normalize_timestamps(raw: &RawStay) -> Result<PatientStay> {
    let admission_time = parse_timestamp(&raw.admission_time).ok_or_else(|| {
        Error::Validation(format!(
            "stay {}: unparseable admission time {:?}",
            raw.stay_id, raw.admission_time
        ))
    })?;
    let mut missing = Vec::new();
    let mut notes = Vec::with_capacity(raw.notes.len());
    for n in &raw.notes {
        match n.timestamp.as_deref().and_then(parse_timestamp) {
            Some(timestamp) => notes.push(Note {
                note_id: n.note_id.clone(),
                category: n.category,
                timestamp,
                tokens: n.tokens.clone(),
            }),
            None => missing.push(n.note_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "stay {}: notes without a date: {}",
            raw.stay_id,
            missing.join(", ")
        )));
    }
    let mut labels = raw.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    let mut stay = PatientStay {
        stay_id: raw.stay_id.clone(),
        admission_time,
        labels,
        notes,
    };
    sort_notes(&mut stay);
    Ok(stay)
}

/// Ascending by timestamp, ties broken by note id.
pub fn sort_notes(stay: &mut PatientStay) {
    stay.notes
        .sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.note_id.cmp(&b.note_id)));
}

/// Drops every note after the first discharge summary and rejects stays
/// that lack one or consist of nothing else.
pub fn enforce_terminal_discharge(mut stay: PatientStay) -> Result<PatientStay> {
    let reject = |reason| Error::Rejected {
        stay_id: stay.stay_id.clone(),
        reason,
    };
    let Some(ds) = stay
        .notes
        .iter()
        .position(|n| n.category == Category::DischargeSummary)
    else {
        return Err(reject(RejectReason::NoDischargeSummary));
    };
    if ds == 0 {
        return Err(reject(RejectReason::DischargeOnly));
    }
    let dropped = stay.notes.len() - ds - 1;
    if dropped > 0 {
        log::debug!("stay {}: dropped {dropped} notes after the discharge summary", stay.stay_id);
    }
    stay.notes.truncate(ds + 1);
    Ok(stay)
}

/// Checks every structural invariant of a preprocessed stay.
pub fn validate(stay: &PatientStay, vocab_size: usize, num_labels: usize) -> Result<()> {
    let fail = |msg: String| Err(Error::Validation(format!("stay {}: {msg}", stay.stay_id)));
    let Some(last) = stay.notes.last() else {
        return fail("no notes".into());
    };
    if last.category != Category::DischargeSummary {
        return fail("final note is not a discharge summary".into());
    }
    let ds_count = stay
        .notes
        .iter()
        .filter(|n| n.category == Category::DischargeSummary)
        .count();
    if ds_count != 1 {
        return fail(format!("{ds_count} discharge summaries"));
    }
    if stay.notes.len() < 2 {
        return fail("no notes besides the discharge summary".into());
    }
    for w in stay.notes.windows(2) {
        let key = |n: &Note| (n.timestamp, n.note_id.clone());
        if key(&w[0]) >= key(&w[1]) {
            return fail(format!(
                "notes {} and {} out of order",
                w[0].note_id, w[1].note_id
            ));
        }
    }
    for n in &stay.notes {
        if let Some(&t) = n.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return fail(format!(
                "note {} has token {t} outside vocabulary of {vocab_size}",
                n.note_id
            ));
        }
    }
    for w in stay.labels.windows(2) {
        if w[0] >= w[1] {
            return fail("labels not strictly increasing".into());
        }
    }
    if let Some(&l) = stay.labels.iter().find(|&&l| l as usize >= num_labels) {
        return fail(format!("label {l} outside [0, {num_labels})"));
    }
    Ok(())
}

/// Full ingest path for one raw record.
pub fn ingest(raw: &RawStay, vocab_size: usize, num_labels: usize) -> Result<PatientStay> {
    let stay = normalize_timestamps(raw)?;
    let stay = enforce_terminal_discharge(stay)?;
    validate(&stay, vocab_size, num_labels)?;
    Ok(stay)
}

/// Ingests a batch, splitting accepted stays from rejections.
pub fn ingest_all(
    raws: &[RawStay],
    vocab_size: usize,
    num_labels: usize,
) -> (Vec<PatientStay>, Vec<Error>) {
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for raw in raws {
        match ingest(raw, vocab_size, num_labels) {
            Ok(s) => ok.push(s),
            Err(e) => rejected.push(e),
        }
    }
    ok.sort_by(|a, b| a.stay_id.cmp(&b.stay_id));
    (ok, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::RawNote;
    use proptest::prelude::*;

    fn raw_note(id: &str, cat: Category, ts: Option<&str>) -> RawNote {
        RawNote {
            note_id: id.into(),
            category: cat,
            timestamp: ts.map(str::to_string),
            tokens: vec![1, 2, 3],
        }
    }

    fn raw(notes: Vec<RawNote>) -> RawStay {
        RawStay {
            stay_id: "S1".into(),
            admission_time: "2010-03-01T08:00:00".into(),
            labels: vec![0, 2],
            notes,
        }
    }

    #[test]
    fn date_only_defaults_to_noon() {
        let stay = normalize_timestamps(&raw(vec![raw_note("a", Category::Nursing, Some("2010-03-04"))])).unwrap();
        assert_eq!(
            stay.notes[0].timestamp,
            parse_timestamp("2010-03-04T12:00:00").unwrap()
        );
    }

    #[test]
    fn full_timestamp_unchanged() {
        let stay = normalize_timestamps(&raw(vec![raw_note(
            "a",
            Category::Nursing,
            Some("2010-03-04T07:31:00"),
        )]))
        .unwrap();
        assert_eq!(
            stay.notes[0].timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            "2010-03-04 07:31:00"
        );
    }

    #[test]
    fn dateless_note_is_named_in_error() {
        let err = normalize_timestamps(&raw(vec![
            raw_note("ok", Category::Nursing, Some("2010-03-04")),
            raw_note("dateless", Category::Echo, None),
        ]))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dateless") && !msg.contains("ok,"), "{msg}");
    }

    fn stay_of(cats: &[Category]) -> PatientStay {
        let raws = cats
            .iter()
            .enumerate()
            .map(|(i, &c)| raw_note(&format!("n{i}"), c, Some(&format!("2010-03-0{}T10:00:00", i + 1))))
            .collect();
        normalize_timestamps(&raw(raws)).unwrap()
    }

    fn cats(stay: &PatientStay) -> Vec<Category> {
        stay.notes.iter().map(|n| n.category).collect()
    }

    #[test]
    fn notes_after_first_discharge_summary_dropped() {
        use Category::*;
        let s = enforce_terminal_discharge(stay_of(&[Nursing, DischargeSummary, Nursing, DischargeSummary])).unwrap();
        assert_eq!(cats(&s), vec![Nursing, DischargeSummary]);
    }

    #[test]
    fn discharge_only_rejected() {
        let err = enforce_terminal_discharge(stay_of(&[Category::DischargeSummary])).unwrap_err();
        match err {
            Error::Rejected { reason, .. } => assert_eq!(reason.code(), "discharge-only"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_discharge_rejected() {
        let err = enforce_terminal_discharge(stay_of(&[Category::Echo])).unwrap_err();
        assert!(matches!(
            err,
            Error::Rejected {
                reason: RejectReason::NoDischargeSummary,
                ..
            }
        ));
    }

    #[test]
    fn valid_sequence_unchanged() {
        use Category::*;
        let s = stay_of(&[Echo, Radiology, DischargeSummary]);
        let out = enforce_terminal_discharge(s.clone()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn simultaneous_notes_ordered_by_id() {
        let s = normalize_timestamps(&raw(vec![
            raw_note("b", Category::Nursing, Some("2010-03-02")),
            raw_note("a", Category::Echo, Some("2010-03-02")),
        ]))
        .unwrap();
        assert_eq!(s.notes[0].note_id, "a");
    }

    fn arb_category() -> impl Strategy<Value = Category> {
        prop::sample::select(Category::ALL.to_vec())
    }

    proptest! {
        // Whatever the input, an accepted stay satisfies every invariant.
        #[test]
        fn ingest_output_always_valid(
            notes in prop::collection::vec(
                (arb_category(), prop::option::weighted(0.9, 0u32..200), 0u32..5, prop::collection::vec(0u32..60, 0..6)),
                0..8,
            ),
            labels in prop::collection::vec(0u32..12, 0..5),
        ) {
            let raws = notes
                .iter()
                .enumerate()
                .map(|(i, (c, hour, day, toks))| RawNote {
                    note_id: format!("n{}", i % 4),
                    category: *c,
                    timestamp: hour.map(|h| {
                        if h % 3 == 0 {
                            format!("2010-03-{:02}", day + 1)
                        } else {
                            format!("2010-03-{:02}T{:02}:00:00", day + 1, h % 24)
                        }
                    }),
                    tokens: toks.clone(),
                })
                .collect();
            let r = RawStay { stay_id: "P".into(), admission_time: "2010-03-01".into(), labels, notes: raws };
            match ingest(&r, 50, 10) {
                Ok(stay) => {
                    prop_assert!(validate(&stay, 50, 10).is_ok());
                    prop_assert_eq!(stay.notes.last().unwrap().category, Category::DischargeSummary);
                    prop_assert!(stay.notes.len() >= 2);
                }
                Err(_) => {}
            }
        }
    }
}
