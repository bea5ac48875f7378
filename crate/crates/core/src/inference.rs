//! Extended-context inference: encode a long sequence in windows of at most
//! `nmax` chunks, concatenate the context rows, then run label attention
//! once over the whole sequence.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{truncate_to_cutoff, ChunkSequence, CutoffSpec};
use crate::encoder::ChunkEncoder;
use crate::error::{Error, Result};
use crate::model::{LabelAttentionTrace, Lahst, TemporalPredictions};
use crate::numerics::Tensor;

/// How the causal layer sees context across window boundaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CausalScope {
    /// Each window is an independent sequence.
    #[default]
    WindowLocal,
    /// Each window is recomputed with all chunks before it as context.
    FullPrefix,
}

impl std::fmt::Display for CausalScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::WindowLocal => "window-local",
            Self::FullPrefix => "full-prefix",
        })
    }
}

impl std::str::FromStr for CausalScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window-local" => Ok(Self::WindowLocal),
            "full-prefix" => Ok(Self::FullPrefix),
            _ => Err(Error::Config(format!("unknown causal scope {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub nmax: usize,
    pub causal_scope: CausalScope,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { nmax: 16, causal_scope: CausalScope::WindowLocal }
    }
}

/// Consecutive windows `[0, nmax), [nmax, 2 nmax), ...` covering `0..n`.
pub fn windows(n: usize, nmax: usize) -> Vec<Range<usize>> {
    assert!(nmax >= 1, "window size must be positive");
    (0..n).step_by(nmax).map(|s| s..(s + nmax).min(n)).collect()
}

/// Context rows for the whole sequence, computed window by window.
pub fn eca_context<E: ChunkEncoder>(model: &Lahst<E>, seq: &ChunkSequence, cfg: InferenceConfig) -> Result<Tensor> {
    if cfg.nmax == 0 {
        return Err(Error::Config("nmax must be at least 1".into()));
    }
    let d = model.config.dim;
    let mut rows = Vec::with_capacity(seq.len() * d);
    for w in windows(seq.len(), cfg.nmax) {
        let h = match cfg.causal_scope {
            CausalScope::WindowLocal => model.context(&seq.chunks[w.clone()])?,
            CausalScope::FullPrefix => model.context(&seq.chunks[..w.end])?,
        };
        let skip = h.shape()[0] - w.len();
        rows.extend_from_slice(&h.data()[skip * d..]);
    }
    Tensor::new(vec![seq.len(), d], rows)
}

#[derive(Clone, Debug)]
pub struct EcaOutput {
    pub predictions: TemporalPredictions,
    pub trace: LabelAttentionTrace,
    pub context: Tensor,
}

/// Windowed encoding followed by one label-attention pass over all rows.
pub fn eca_infer<E: ChunkEncoder>(model: &Lahst<E>, seq: &ChunkSequence, cfg: InferenceConfig) -> Result<EcaOutput> {
    if seq.is_empty() {
        return Ok(EcaOutput {
            predictions: TemporalPredictions::empty(model.config.num_labels),
            trace: LabelAttentionTrace { heads: Vec::new(), categories: Vec::new() },
            context: Tensor::zeros(&[0, model.config.dim]),
        });
    }
    let h = eca_context(model, seq, cfg)?;
    let positions: Vec<usize> = seq.chunks.iter().map(|c| c.position).collect();
    let (predictions, trace) = model.label_stage(&h, &seq.categories(), &positions)?;
    Ok(EcaOutput { predictions, trace, context: h })
}

/// Label stage computed for each window of temporal positions separately,
/// each over the context rows up to the window's end, then concatenated.
pub fn label_stage_windowed<E: ChunkEncoder>(model: &Lahst<E>, h: &Tensor, nmax: usize) -> Result<Tensor> {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let l = model.config.num_labels;
    let mut out = Vec::with_capacity(n * l);
    for w in windows(n, nmax) {
        let prefix = Tensor::new(vec![w.end, d], h.data()[..w.end * d].to_vec())?;
        let (p, _) = model.label_stage(&prefix, &[], &[])?;
        out.extend_from_slice(&p.probs.data()[w.start * l..]);
    }
    Tensor::new(vec![n, l], out)
}

/// Deviations between windowed and single-pass computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub n_total: usize,
    pub nmax: usize,
    /// Label stage over a fixed context: windowed vs single pass.
    pub label_stage_max_abs_diff: f64,
    /// Causal stage: window-local context rows vs full-prefix rows.
    pub causal_stage_max_abs_diff: f64,
    /// Final predictions: window-local pipeline vs single full forward.
    pub prediction_max_abs_diff: f64,
}

pub fn exactness_check<E: ChunkEncoder>(model: &Lahst<E>, seq: &ChunkSequence, nmax: usize) -> Result<ExactnessReport> {
    if seq.is_empty() {
        return Err(Error::Contract("exactness check over an empty sequence".into()));
    }
    let local = eca_context(model, seq, InferenceConfig { nmax, causal_scope: CausalScope::WindowLocal })?;
    let full = model.context(&seq.chunks)?;
    let (single, _) = model.label_stage(&full, &[], &[])?;
    let windowed = label_stage_windowed(model, &full, nmax)?;
    let (local_pred, _) = model.label_stage(&local, &[], &[])?;
    Ok(ExactnessReport {
        n_total: seq.len(),
        nmax,
        label_stage_max_abs_diff: windowed.max_abs_diff(&single.probs),
        causal_stage_max_abs_diff: local.max_abs_diff(&full),
        prediction_max_abs_diff: local_pred.probs.max_abs_diff(&single.probs),
    })
}

/// Final-position probabilities after applying `cutoff`; `prior` when the
/// cutoff leaves no chunks.
pub fn predict_at_cutoff<E: ChunkEncoder>(
    model: &Lahst<E>,
    seq: &ChunkSequence,
    cutoff: CutoffSpec,
    cfg: InferenceConfig,
    prior: &[f64],
) -> Result<Vec<f64>> {
    let cut = truncate_to_cutoff(seq, cutoff);
    if cut.is_empty() {
        log::debug!("stay {} has no chunks under cutoff {cutoff}; using label prior", seq.stay_id);
        return Ok(prior.to_vec());
    }
    let out = eca_infer(model, &cut, cfg)?;
    Ok(out.predictions.last_row().unwrap().to_vec())
}
