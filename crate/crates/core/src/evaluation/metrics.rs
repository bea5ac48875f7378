//! Multi-label metrics over a score matrix `[P, L]` and a 0/1 gold matrix of
//! the same shape.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_shapes(scores: &Tensor, gold: &Tensor) -> Result<(usize, usize)> {
    if scores.rank() != 2 || scores.shape() != gold.shape() {
        return Err(Error::Shape(format!(
            "scores {:?} and gold {:?} must be equal-shape matrices",
            scores.shape(),
            gold.shape()
        )));
    }
    Ok((scores.shape()[0], scores.shape()[1]))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// F1 over all (patient, label) cells pooled; scores `>= threshold` count as
/// positive predictions.
pub fn micro_f1(scores: &Tensor, gold: &Tensor, threshold: f64) -> Result<f64> {
    check_shapes(scores, gold)?;
    let mut c = Counts::default();
    for (s, g) in scores.data().iter().zip(gold.data()) {
        c.add(*s >= threshold, *g > 0.5);
    }
    Ok(c.f1())
}

/// Unweighted mean of per-label F1. A label with no gold and no predicted
/// positives scores 0.
pub fn macro_f1(scores: &Tensor, gold: &Tensor, threshold: f64) -> Result<f64> {
    let (p, l) = check_shapes(scores, gold)?;
    if l == 0 {
        return Ok(0.0);
    }
    let mut counts = vec![Counts::default(); l];
    for i in 0..p {
        for (j, c) in counts.iter_mut().enumerate() {
            c.add(scores.at(&[i, j]) >= threshold, gold.at(&[i, j]) > 0.5);
        }
    }
    Ok(counts.iter().map(|c| c.f1()).sum::<f64>() / l as f64)
}

/// Mann-Whitney AUC with midranks for ties; `None` without both classes.
pub fn auc(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let pos = gold.iter().filter(|&&g| g).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| gold[k]).count() as f64;
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub fn micro_auc(scores: &Tensor, gold: &Tensor) -> Result<Option<f64>> {
    check_shapes(scores, gold)?;
    let g: Vec<bool> = gold.data().iter().map(|&v| v > 0.5).collect();
    Ok(auc(scores.data(), &g))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroAuc {
    /// Mean over labels with both classes present; `None` if there are none.
    pub value: Option<f64>,
    pub skipped: usize,
}

pub fn macro_auc(scores: &Tensor, gold: &Tensor) -> Result<MacroAuc> {
    let (p, l) = check_shapes(scores, gold)?;
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for j in 0..l {
        let s: Vec<f64> = (0..p).map(|i| scores.at(&[i, j])).collect();
        let g: Vec<bool> = (0..p).map(|i| gold.at(&[i, j]) > 0.5).collect();
        match auc(&s, &g) {
            Some(a) => {
                sum += a;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(MacroAuc {
        value: (used > 0).then(|| sum / used as f64),
        skipped,
    })
}

/// Indices of the `k` highest scores; equal scores go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean over patients of the gold fraction among the top `k` labels.
pub fn precision_at_k(scores: &Tensor, gold: &Tensor, k: usize) -> Result<f64> {
    let (p, l) = check_shapes(scores, gold)?;
    if k == 0 || l < k {
        return Err(Error::Contract(format!("precision@{k} needs at least {k} labels, have {l}")));
    }
    if p == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..p)
        .map(|i| {
            let hits = top_k(scores.row(i), k).iter().filter(|&&j| gold.at(&[i, j]) > 0.5).count();
            hits as f64 / k as f64
        })
        .sum();
    Ok(total / p as f64)
}
