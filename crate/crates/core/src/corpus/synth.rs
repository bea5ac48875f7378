//! Synthetic stays with planted label signal.
//!
//! Each label owns a disjoint block of signal tokens at the bottom of the
//! vocabulary; the remainder is noise. Diagnostic reports (Echo, Radiology,
//! ECG) mention each gold label with a probability that ramps linearly over
//! the stay. The discharge summary mentions every gold label. Other note
//! categories carry noise only.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::sort_notes;
use super::types::{Category, Note, PatientStay};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub patients: usize,
    pub signal_tokens_per_label: usize,
    /// Stay length range in days.
    pub stay_days: (f64, f64),
    /// Expected notes per day for each non-discharge category.
    pub note_rates: BTreeMap<Category, f64>,
    /// Token count range for ordinary notes.
    pub note_tokens: (usize, usize),
    /// Token count range for the discharge summary.
    pub discharge_tokens: (usize, usize),
    /// Label prevalence is spread linearly over this range across labels.
    pub label_prevalence: (f64, f64),
    /// Probability that a diagnostic note mentions a gold label, at admission
    /// and at discharge; linear in between.
    pub signal_ramp: (f64, f64),
    /// Signal tokens inserted per mention in a diagnostic note.
    pub tokens_per_mention: usize,
    /// Signal tokens per gold label in the discharge summary.
    pub discharge_tokens_per_mention: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let note_rates = BTreeMap::from([
            (Category::Nursing, 2.0),
            (Category::Physician, 1.0),
            (Category::Radiology, 0.8),
            (Category::Echo, 0.6),
            (Category::Ecg, 0.6),
            (Category::Respiratory, 0.5),
            (Category::Other, 0.3),
        ]);
        Self {
            vocab_size: 300,
            num_labels: 20,
            patients: 250,
            signal_tokens_per_label: 1,
            stay_days: (3.0, 12.0),
            note_rates,
            note_tokens: (8, 24),
            discharge_tokens: (384, 576),
            label_prevalence: (0.08, 0.35),
            signal_ramp: (0.2, 0.8),
            tokens_per_mention: 3,
            discharge_tokens_per_mention: 6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_labels == 0 || self.num_labels > 50 {
            return bad(format!("num_labels {} outside 1..=50", self.num_labels));
        }
        if self.num_labels * 4 > self.vocab_size {
            return bad(format!(
                "num_labels {} exceeds vocab_size / 4 = {}",
                self.num_labels,
                self.vocab_size / 4
            ));
        }
        if self.signal_tokens_per_label == 0
            || self.num_labels * self.signal_tokens_per_label >= self.vocab_size
        {
            return bad("signal tokens leave no room for noise tokens".into());
        }
        if self.note_rates.is_empty() || self.note_rates.values().all(|&r| r <= 0.0) {
            return bad("no note categories with a positive rate".into());
        }
        if self.note_rates.contains_key(&Category::DischargeSummary) {
            return bad("discharge summaries are emitted once per stay, not at a rate".into());
        }
        if self.note_rates.values().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("note rates must be finite and non-negative".into());
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.stay_days) || self.stay_days.0 <= 0.0 {
            return bad(format!("invalid stay_days {:?}", self.stay_days));
        }
        for (name, (lo, hi)) in [("label_prevalence", self.label_prevalence), ("signal_ramp", self.signal_ramp)] {
            if !ordered((lo, hi)) || lo < 0.0 || hi > 1.0 {
                return bad(format!("invalid {name} ({lo}, {hi})"));
            }
        }
        let min_tokens = self.discharge_tokens_per_mention * self.num_labels;
        if self.note_tokens.0 == 0 || self.note_tokens.0 > self.note_tokens.1 {
            return bad(format!("invalid note_tokens {:?}", self.note_tokens));
        }
        if self.discharge_tokens.0 < min_tokens.max(1) || self.discharge_tokens.0 > self.discharge_tokens.1 {
            return bad(format!(
                "discharge_tokens {:?} must fit {min_tokens} signal tokens",
                self.discharge_tokens
            ));
        }
        if self.tokens_per_mention == 0 || self.discharge_tokens_per_mention == 0 {
            return bad("tokens per mention must be positive".into());
        }
        Ok(())
    }

    /// Signal tokens owned by `label`.
    pub fn signal_tokens(&self, label: usize) -> std::ops::Range<u32> {
        let k = self.signal_tokens_per_label as u32;
        label as u32 * k..(label as u32 + 1) * k
    }

    /// Label that owns `token`, if it is a signal token.
    pub fn label_of_token(&self, token: u32) -> Option<usize> {
        let l = token as usize / self.signal_tokens_per_label;
        (l < self.num_labels).then_some(l)
    }

    fn noise_range(&self) -> std::ops::Range<u32> {
        (self.num_labels * self.signal_tokens_per_label) as u32..self.vocab_size as u32
    }

    fn prevalence(&self, label: usize) -> f64 {
        let (lo, hi) = self.label_prevalence;
        if self.num_labels == 1 {
            return hi;
        }
        hi - (hi - lo) * label as f64 / (self.num_labels - 1) as f64
    }
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates `config.patients` stays, deterministic in `(config, seed)`.
pub fn generate_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<PatientStay>> {
    config.validate()?;
    Ok((0..config.patients)
        .map(|i| generate_stay(config, seed, i))
        .collect())
}

fn generate_stay(config: &SynthConfig, seed: u64, index: usize) -> PatientStay {
    let mut rng = patient_rng(seed, index);
    let base = NaiveDate::from_ymd_opt(2100, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let admission_time = base + Duration::minutes(rng.random_range(0..(365 * 24 * 60)));
    let (dlo, dhi) = config.stay_days;
    let days = if dhi > dlo { rng.random_range(dlo..dhi) } else { dlo };
    let stay_minutes = (days * 24.0 * 60.0).round() as i64;

    let mut labels: Vec<u32> = (0..config.num_labels)
        .filter(|&l| rng.random_bool(config.prevalence(l)))
        .map(|l| l as u32)
        .collect();
    if labels.is_empty() {
        labels.push(rng.random_range(0..config.num_labels as u32));
    }

    // Poisson arrivals per category over the stay, strictly before discharge.
    let mut events: Vec<(i64, Category)> = Vec::new();
    for (&cat, &rate) in &config.note_rates {
        if rate <= 0.0 {
            continue;
        }
        let per_minute = rate / (24.0 * 60.0);
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            t += -u.ln() / per_minute;
            if t >= stay_minutes as f64 {
                break;
            }
            events.push((t.floor() as i64, cat));
        }
    }
    if events.is_empty() {
        events.push((rng.random_range(0..stay_minutes.max(1)), Category::Nursing));
    }
    events.sort();

    let mut notes = Vec::with_capacity(events.len() + 1);
    for (offset, cat) in events {
        let progress = offset as f64 / stay_minutes.max(1) as f64;
        let len = rng.random_range(config.note_tokens.0..=config.note_tokens.1);
        let mut tokens = noise(config, &mut rng, len);
        if cat.is_diagnostic() {
            let (lo, hi) = config.signal_ramp;
            let p = lo + (hi - lo) * progress;
            for &l in &labels {
                if rng.random_bool(p) {
                    plant(config, &mut rng, &mut tokens, l as usize);
                }
            }
        }
        notes.push(Note {
            note_id: String::new(),
            category: cat,
            timestamp: admission_time + Duration::minutes(offset),
            tokens,
        });
    }
    let len = rng.random_range(config.discharge_tokens.0..=config.discharge_tokens.1);
    let mut tokens = noise(config, &mut rng, len);
    // Each label's mentions form one contiguous run in its own block, so
    // runs never overwrite each other.
    let k = config.discharge_tokens_per_mention;
    let blocks: Vec<usize> = index::sample(&mut rng, len / k, labels.len()).into_vec();
    for (&l, &b) in labels.iter().zip(&blocks) {
        for slot in b * k..(b + 1) * k {
            tokens[slot] = pick_signal(config, &mut rng, l as usize);
        }
    }
    notes.push(Note {
        note_id: String::new(),
        category: Category::DischargeSummary,
        timestamp: admission_time + Duration::minutes(stay_minutes),
        tokens,
    });

    let stay_id = format!("S{index:05}");
    for (i, n) in notes.iter_mut().enumerate() {
        n.note_id = format!("{stay_id}-{i:04}");
    }
    let mut stay = PatientStay {
        stay_id,
        admission_time,
        labels,
        notes,
    };
    sort_notes(&mut stay);
    stay
}

fn noise(config: &SynthConfig, rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    let r = config.noise_range();
    (0..len).map(|_| rng.random_range(r.clone())).collect()
}

fn pick_signal(config: &SynthConfig, rng: &mut ChaCha8Rng, label: usize) -> u32 {
    rng.random_range(config.signal_tokens(label))
}

fn plant(config: &SynthConfig, rng: &mut ChaCha8Rng, tokens: &mut [u32], label: usize) {
    for _ in 0..config.tokens_per_mention {
        let slot = rng.random_range(0..tokens.len());
        tokens[slot] = pick_signal(config, rng, label);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::io::to_jsonl;
    use crate::corpus::preprocess::validate;

    fn small() -> SynthConfig {
        SynthConfig {
            patients: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_output() {
        let a = to_jsonl(&generate_corpus(&small(), 7).unwrap()).unwrap();
        let b = to_jsonl(&generate_corpus(&small(), 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = to_jsonl(&generate_corpus(&small(), 8).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_stays_pass_validators() {
        let cfg = small();
        for s in generate_corpus(&cfg, 3).unwrap() {
            validate(&s, cfg.vocab_size, cfg.num_labels).unwrap();
        }
    }

    #[test]
    fn discharge_summary_mentions_every_gold_label() {
        let cfg = small();
        for s in generate_corpus(&cfg, 11).unwrap() {
            let ds = s.notes.last().unwrap();
            for &l in &s.labels {
                let r = cfg.signal_tokens(l as usize);
                assert!(ds.tokens.iter().any(|t| r.contains(t)), "{} label {l}", s.stay_id);
            }
        }
    }

    #[test]
    fn early_notes_reveal_fewer_labels() {
        let cfg = small();
        let mut early = 0.0;
        let mut full = 0.0;
        let corpus = generate_corpus(&cfg, 5).unwrap();
        for s in &corpus {
            let revealed = |notes: &[Note]| {
                s.labels
                    .iter()
                    .filter(|&&l| {
                        let r = cfg.signal_tokens(l as usize);
                        notes.iter().any(|n| n.tokens.iter().any(|t| r.contains(t)))
                    })
                    .count() as f64
                    / s.labels.len() as f64
            };
            let quarter = (s.notes.len() / 4).max(1);
            early += revealed(&s.notes[..quarter]);
            full += revealed(&s.notes);
        }
        let n = corpus.len() as f64;
        assert!(early / n < full / n, "{} vs {}", early / n, full / n);
    }

    #[test]
    fn invalid_configs_rejected() {
        let too_many = SynthConfig { num_labels: 30, vocab_size: 100, ..SynthConfig::default() };
        assert!(too_many.validate().is_err());
        let empty = SynthConfig { note_rates: BTreeMap::new(), ..SynthConfig::default() };
        assert!(empty.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }

    #[test]
    fn signal_token_blocks_are_disjoint() {
        let cfg = SynthConfig::default();
        for l in 0..cfg.num_labels {
            for t in cfg.signal_tokens(l) {
                assert_eq!(cfg.label_of_token(t), Some(l));
            }
        }
        assert_eq!(cfg.label_of_token(cfg.noise_range().start), None);
    }
}
