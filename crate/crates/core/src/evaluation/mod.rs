//! Metrics, per-cutoff reports, the context-strategy ablation and
//! per-category attention summaries.

pub mod metrics;

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    truncate_to_cutoff, volume_percentile_cutoffs, Category, ChunkSequence, CutoffSpec, LabeledSequence,
    PatientStay, VolumeWeighting,
};
use crate::encoder::ChunkEncoder;
use crate::error::{Error, Result};
use crate::inference::{eca_infer, InferenceConfig};
use crate::model::{LabelAttentionTrace, Lahst};
use crate::numerics::Tensor;
use crate::training::sample_subsequence;

pub use metrics::{auc, macro_auc, macro_f1, micro_auc, micro_f1, precision_at_k, top_k, MacroAuc, DEFAULT_THRESHOLD};

pub const P_AT_K: usize = 5;

/// A cutoff as requested by the user, before percentiles are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutoffRequest {
    Hours(f64),
    /// Fraction of the training-corpus note volume, e.g. 0.25.
    Percentile(f64),
    ExcludeDischargeSummary,
    FullSequence,
}

impl CutoffRequest {
    pub fn defaults() -> Vec<CutoffRequest> {
        vec![
            CutoffRequest::Percentile(0.25),
            CutoffRequest::Percentile(0.5),
            CutoffRequest::Percentile(0.75),
            CutoffRequest::ExcludeDischargeSummary,
            CutoffRequest::FullSequence,
        ]
    }

    pub fn parse_list(s: &str) -> Result<Vec<CutoffRequest>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl FromStr for CutoffRequest {
    type Err = Error;

    /// Accepts hours (`48`, `48h`), percentiles (`p25`), `excl-ds` and `full`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised cutoff {s:?}"));
        match s {
            "excl-ds" => return Ok(Self::ExcludeDischargeSummary),
            "full" => return Ok(Self::FullSequence),
            _ => {}
        }
        if let Some(p) = s.strip_prefix('p') {
            let v: f64 = p.parse().map_err(|_| bad())?;
            if !(v > 0.0 && v < 100.0) {
                return Err(bad());
            }
            return Ok(Self::Percentile(v / 100.0));
        }
        let h: f64 = s.strip_suffix('h').unwrap_or(s).parse().map_err(|_| bad())?;
        CutoffSpec::hours(h)?;
        Ok(Self::Hours(h))
    }
}

/// A resolved cutoff with its report name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCutoff {
    pub name: String,
    pub spec: CutoffSpec,
}

/// Turns percentile requests into hour cutoffs over `train`.
pub fn resolve_cutoffs(requests: &[CutoffRequest], train: &[PatientStay], weighting: VolumeWeighting) -> Result<Vec<NamedCutoff>> {
    requests
        .iter()
        .map(|r| {
            Ok(match *r {
                CutoffRequest::Hours(h) => NamedCutoff { name: format!("{h}h"), spec: CutoffSpec::hours(h)? },
                CutoffRequest::Percentile(p) => {
                    let h = volume_percentile_cutoffs(train, &[p], weighting)?[0];
                    NamedCutoff { name: format!("p{}", (p * 100.0).round()), spec: CutoffSpec::hours(h)? }
                }
                CutoffRequest::ExcludeDischargeSummary => NamedCutoff { name: "excl-ds".into(), spec: CutoffSpec::ExcludeDischargeSummary },
                CutoffRequest::FullSequence => NamedCutoff { name: "full".into(), spec: CutoffSpec::FullSequence },
            })
        })
        .collect()
}

/// Maps `f` over `items` on all available cores, keeping input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// One row of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub cutoff: String,
    pub hours: Option<f64>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auc: Option<f64>,
    pub macro_auc: Option<f64>,
    pub macro_auc_skipped: usize,
    pub p_at_5: Option<f64>,
    pub n_patients: usize,
    /// Stays with no chunks under the cutoff (scored with the prior).
    pub n_empty: usize,
}

impl CutoffRow {
    pub fn from_scores(cutoff: &str, spec: CutoffSpec, scores: &Tensor, gold: &Tensor, n_empty: usize) -> Result<Self> {
        let mac = macro_auc(scores, gold)?;
        let l = scores.shape()[1];
        Ok(Self {
            cutoff: cutoff.to_string(),
            hours: match spec {
                CutoffSpec::HoursSinceAdmission(h) => Some(h),
                _ => None,
            },
            micro_f1: micro_f1(scores, gold, DEFAULT_THRESHOLD)?,
            macro_f1: macro_f1(scores, gold, DEFAULT_THRESHOLD)?,
            micro_auc: micro_auc(scores, gold)?,
            macro_auc: mac.value,
            macro_auc_skipped: mac.skipped,
            p_at_5: if l >= P_AT_K { Some(precision_at_k(scores, gold, P_AT_K)?) } else { None },
            n_patients: scores.shape()[0],
            n_empty,
        })
    }
}

pub fn gold_matrix(corpus: &[LabeledSequence], num_labels: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = corpus.iter().map(|s| s.gold(num_labels)).collect();
    Tensor::new(vec![corpus.len(), num_labels], rows.concat()).unwrap()
}

/// Final-position scores for every stay under `spec` with full ECA
/// context, plus the number of stays left empty by the cutoff.
pub fn scores_at_cutoff<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    spec: CutoffSpec,
    cfg: InferenceConfig,
    prior: &[f64],
) -> Result<(Tensor, usize)> {
    scores_with_context(model, corpus, spec, cfg, prior, InferenceContext::Eca, 0)
}

/// As [`scores_at_cutoff`], restricting each stay to the chunks chosen by
/// `ctx` after the cutoff is applied.
pub fn scores_with_context<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    spec: CutoffSpec,
    cfg: InferenceConfig,
    prior: &[f64],
    ctx: InferenceContext,
    seed: u64,
) -> Result<(Tensor, usize)> {
    let indexed: Vec<(usize, &LabeledSequence)> = corpus.iter().enumerate().collect();
    let rows = par_map(&indexed, |(i, s)| {
        let cut = truncate_to_cutoff(&s.seq, spec);
        if cut.is_empty() {
            return Ok((prior.to_vec(), true));
        }
        let view = context_view(&cut, ctx, cfg.nmax, seed, *i as u64);
        Ok((eca_infer(model, &view, cfg)?.predictions.last_row().unwrap().to_vec(), false))
    })?;
    let n_empty = rows.iter().filter(|r| r.1).count();
    let l = model.config.num_labels;
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    Ok((Tensor::new(vec![corpus.len(), l], data)?, n_empty))
}

pub fn evaluate_cutoff<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    name: &str,
    spec: CutoffSpec,
    cfg: InferenceConfig,
    prior: &[f64],
) -> Result<CutoffRow> {
    evaluate_cutoff_with(model, corpus, name, spec, cfg, prior, InferenceContext::Eca, 0)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_cutoff_with<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    name: &str,
    spec: CutoffSpec,
    cfg: InferenceConfig,
    prior: &[f64],
    ctx: InferenceContext,
    seed: u64,
) -> Result<CutoffRow> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty corpus".into()));
    }
    let (scores, n_empty) = scores_with_context(model, corpus, spec, cfg, prior, ctx, seed)?;
    if n_empty > 0 {
        log::warn!("{n_empty} stays have no chunks under cutoff {name}; scored with the label prior");
    }
    CutoffRow::from_scores(name, spec, &scores, &gold_matrix(corpus, model.config.num_labels), n_empty)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub checkpoint_id: String,
    pub context_strategy: String,
    pub causal_scope: String,
    pub nmax: usize,
    pub threshold: f64,
}

/// Metrics for each cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<CutoffRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl MetricsReport {
    pub fn row(&self, cutoff: &str) -> Option<&CutoffRow> {
        self.rows.iter().find(|r| r.cutoff == cutoff)
    }

    /// Aligned text table with metrics scaled to percent.
    pub fn to_table(&self) -> String {
        let header = ["cutoff", "hours", "Micro-F1", "Macro-F1", "Micro-AUC", "Macro-AUC", "P@5", "n"];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.cutoff.clone(),
                r.hours.map_or_else(|| "-".into(), |h| format!("{h:.1}")),
                pct(Some(r.micro_f1)),
                pct(Some(r.macro_f1)),
                pct(r.micro_auc),
                pct(r.macro_auc),
                pct(r.p_at_5),
                r.n_patients.to_string(),
            ]);
        }
        render_table(&lines)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn render_table(lines: &[Vec<String>]) -> String {
    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in lines {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}

pub fn evaluate_at_cutoffs<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    cutoffs: &[NamedCutoff],
    cfg: InferenceConfig,
    prior: &[f64],
    ctx: InferenceContext,
    metadata: ReportMetadata,
) -> Result<MetricsReport> {
    let rows = cutoffs
        .iter()
        .map(|c| evaluate_cutoff_with(model, corpus, &c.name, c.spec, cfg, prior, ctx, metadata.seed))
        .collect::<Result<_>>()?;
    Ok(MetricsReport { metadata, rows })
}

/// How much context the model sees at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceContext {
    /// The most recent `nmax` chunks.
    Last,
    /// `nmax` chunks at random positions.
    Random,
    /// Every chunk, via windowed encoding.
    Eca,
}

impl InferenceContext {
    pub const ALL: [InferenceContext; 3] = [Self::Last, Self::Random, Self::Eca];

    pub fn name(self) -> &'static str {
        match self {
            Self::Last => "last",
            Self::Random => "random",
            Self::Eca => "eca",
        }
    }
}

impl FromStr for InferenceContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "random" => Ok(Self::Random),
            "eca" => Ok(Self::Eca),
            _ => Err(Error::Config(format!("unknown context strategy {s:?}"))),
        }
    }
}

/// The visible part of `seq` under a context strategy. Random draws use a
/// stream keyed by the stay's index so results do not depend on scheduling.
pub fn context_view(seq: &ChunkSequence, ctx: InferenceContext, nmax: usize, seed: u64, stream: u64) -> ChunkSequence {
    match ctx {
        InferenceContext::Eca => seq.clone(),
        InferenceContext::Last => seq.last(nmax),
        InferenceContext::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream + 1);
            sample_subsequence(seq, nmax, &mut rng)
        }
    }
}

/// Micro-F1 grid: one row per cutoff, one column per strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub strategies: Vec<InferenceContext>,
    pub cutoffs: Vec<String>,
    pub micro_f1: Vec<Vec<f64>>,
}

impl AblationReport {
    pub fn get(&self, cutoff: &str, ctx: InferenceContext) -> Option<f64> {
        let r = self.cutoffs.iter().position(|c| c == cutoff)?;
        let c = self.strategies.iter().position(|&s| s == ctx)?;
        Some(self.micro_f1[r][c])
    }

    pub fn to_table(&self) -> String {
        let mut lines = vec![std::iter::once("cutoff".to_string())
            .chain(self.strategies.iter().map(|s| s.name().to_string()))
            .collect::<Vec<_>>()];
        for (c, row) in self.cutoffs.iter().zip(&self.micro_f1) {
            lines.push(std::iter::once(c.clone()).chain(row.iter().map(|v| pct(Some(*v)))).collect());
        }
        render_table(&lines)
    }
}

/// Micro-F1 at each cutoff under each inference context. All strategies
/// go through the same windowed inference; they differ only in which
/// chunks are passed in.
pub fn context_strategy_ablation<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    cutoffs: &[NamedCutoff],
    strategies: &[InferenceContext],
    cfg: InferenceConfig,
    prior: &[f64],
    seed: u64,
) -> Result<AblationReport> {
    let gold = gold_matrix(corpus, model.config.num_labels);
    let mut grid = Vec::with_capacity(cutoffs.len());
    for c in cutoffs {
        let mut row = Vec::with_capacity(strategies.len());
        for &ctx in strategies {
            let (scores, _) = scores_with_context(model, corpus, c.spec, cfg, prior, ctx, seed)?;
            row.push(micro_f1(&scores, &gold, DEFAULT_THRESHOLD)?);
        }
        grid.push(row);
    }
    Ok(AblationReport {
        strategies: strategies.to_vec(),
        cutoffs: cutoffs.iter().map(|c| c.name.clone()).collect(),
        micro_f1: grid,
    })
}

/// Attention mass per category at the final position of one trace,
/// averaged over heads and labels.
pub fn category_mass(trace: &LabelAttentionTrace) -> [f64; Category::COUNT] {
    let mut mass = [0.0; Category::COUNT];
    if trace.is_empty() {
        return mass;
    }
    let w = trace.mean_weights(trace.len() - 1);
    for (c, x) in trace.categories.iter().zip(w) {
        mass[c.index()] += x;
    }
    mass
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub category: Category,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub cutoff: String,
    pub rows: Vec<CategoryWeight>,
}

impl AttentionSummary {
    /// Mean and sample standard deviation per category over stays.
    pub fn from_masses(cutoff: &str, masses: &[[f64; Category::COUNT]]) -> Self {
        let n = masses.len();
        let rows = Category::ALL
            .iter()
            .map(|&c| {
                let xs: Vec<f64> = masses.iter().map(|m| m[c.index()]).collect();
                let mean = if n > 0 { xs.iter().sum::<f64>() / n as f64 } else { 0.0 };
                let std = if n > 1 {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                CategoryWeight { category: c, mean, std, n }
            })
            .collect();
        Self { cutoff: cutoff.to_string(), rows }
    }

    pub fn mean(&self, c: Category) -> f64 {
        self.rows[c.index()].mean
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,mean_weight,std,n\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.category.name(), r.mean, r.std, r.n).unwrap();
        }
        out
    }
}

/// Per-category attention at the last visible position, over all stays
/// with at least one chunk under `cutoff`.
pub fn attention_summary<E: ChunkEncoder + Sync>(
    model: &Lahst<E>,
    corpus: &[LabeledSequence],
    cutoff: &NamedCutoff,
    cfg: InferenceConfig,
) -> Result<AttentionSummary> {
    let masses = par_map(corpus, |s| {
        let cut = truncate_to_cutoff(&s.seq, cutoff.spec);
        if cut.is_empty() {
            return Ok(None);
        }
        let out = eca_infer(model, &cut, cfg)?;
        Ok(Some(category_mass(&out.trace)))
    })?;
    let masses: Vec<_> = masses.into_iter().flatten().collect();
    Ok(AttentionSummary::from_masses(&cutoff.name, &masses))
}

#[cfg(test)]
mod tests;
