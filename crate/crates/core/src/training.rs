//! Training loop: sub-sequence sampling, loss over every temporal position,
//! one-cycle learning rate, AdamW and early stopping on dev Micro-F1.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::corpus::{ChunkSequence, CutoffSpec, LabeledSequence};
use crate::encoder::ChunkEncoder;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_cutoff, CutoffRow};
use crate::inference::InferenceConfig;
use crate::model::{Lahst, Params};
use crate::numerics::{Tape, Tensor, Var};

/// How a training sample is cut from a long stay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextStrategy {
    /// Up to `nmax` chunks at random positions, kept in order.
    #[default]
    #[serde(rename = "random")]
    RandomSubsequence,
    /// The most recent `nmax` chunks.
    #[serde(rename = "last")]
    LastChunks,
}

impl std::str::FromStr for ContextStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::RandomSubsequence),
            "last" => Ok(Self::LastChunks),
            _ => Err(Error::Config(format!("unknown training context strategy {s:?}"))),
        }
    }
}

/// Unit over which `RandomSubsequence` draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingUnit {
    #[default]
    Chunk,
    Note,
}

/// Dev metric used for model selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevSelection {
    /// Micro-F1 with the full sequence visible.
    #[default]
    FullSequence,
    /// Mean Micro-F1 over the excl-ds and full cutoffs plus `dev_hours`.
    MeanOverCutoffs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub nmax: usize,
    pub peak_lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub context_strategy: ContextStrategy,
    pub sampling_unit: SamplingUnit,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dev_selection: DevSelection,
    /// Extra hour cutoffs for `MeanOverCutoffs`.
    pub dev_hours: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nmax: 16,
            peak_lr: 5e-5,
            max_epochs: 20,
            patience: 3,
            batch_size: 1,
            seed: 0,
            context_strategy: ContextStrategy::RandomSubsequence,
            sampling_unit: SamplingUnit::Chunk,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dev_selection: DevSelection::FullSequence,
            dev_hours: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.nmax == 0 {
            return bad("nmax must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(self.peak_lr > 0.0) {
            return bad("peak_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig { nmax: self.nmax, ..InferenceConfig::default() }
    }
}

/// `m = min(nmax, len)` distinct chunk indices drawn uniformly, ascending.
pub fn sample_indices(len: usize, nmax: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = nmax.min(len);
    let mut idx = index::sample(rng, len, m).into_vec();
    idx.sort_unstable();
    idx
}

pub fn sample_subsequence(seq: &ChunkSequence, nmax: usize, rng: &mut ChaCha8Rng) -> ChunkSequence {
    seq.select(&sample_indices(seq.len(), nmax, rng))
}

/// Whole notes in random order while they fit into `nmax` chunks, restored
/// to sequence order. Falls back to chunk sampling if no note fits.
pub fn sample_notes(seq: &ChunkSequence, nmax: usize, rng: &mut ChaCha8Rng) -> ChunkSequence {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, c) in seq.chunks.iter().enumerate() {
        match spans.last_mut() {
            Some((s, e)) if seq.chunks[*s].note_id == c.note_id => *e = i + 1,
            _ => spans.push((i, i + 1)),
        }
    }
    spans.shuffle(rng);
    let mut picked = Vec::new();
    let mut used = 0;
    for (s, e) in spans {
        if used + (e - s) <= nmax {
            used += e - s;
            picked.extend(s..e);
        }
    }
    if picked.is_empty() {
        return sample_subsequence(seq, nmax, rng);
    }
    picked.sort_unstable();
    seq.select(&picked)
}

/// Mean BCE of `probs: [N, L]` against the final gold set repeated on
/// every row.
pub fn temporal_bce(tape: &mut Tape, probs: Var, labels: &[u32]) -> Result<Var> {
    let (n, l) = (tape.shape(probs)[0], tape.shape(probs)[1]);
    let mut y = vec![0.0; n * l];
    for row in y.chunks_mut(l) {
        for &g in labels {
            let g = g as usize;
            if g >= l {
                return Err(Error::Validation(format!("label {g} outside {l} labels")));
            }
            row[g] = 1.0;
        }
    }
    tape.bce(probs, &Tensor::new(vec![n, l], y)?)
}

pub const WARMUP_FRACTION: f64 = 0.3;
pub const START_DIV: f64 = 25.0;
pub const END_DIV: f64 = 1e4;

/// One-cycle schedule: linear warm-up from `peak/25` to `peak` over the first
/// 30% of steps, then cosine annealing to `peak/1e4`.
pub fn one_cycle_lr(step: u64, total_steps: u64, peak: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Contract(format!("step {step} outside schedule of {total_steps} steps")));
    }
    let warm = WARMUP_FRACTION * total_steps as f64;
    let s = step as f64;
    Ok(if s < warm {
        warmup_lr(s / warm, peak)
    } else {
        anneal_lr((s - warm) / (total_steps as f64 - warm), peak)
    })
}

fn warmup_lr(frac: f64, peak: f64) -> f64 {
    peak * frac + peak / START_DIV * (1.0 - frac)
}

fn anneal_lr(frac: f64, peak: f64) -> f64 {
    let end = peak / END_DIV;
    end + (peak - end) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Params,
    pub v: Params,
}

impl AdamW {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?.data();
            let m = self.m.get_mut(name).unwrap().data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(name).unwrap().data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(name)?.data(), self.v.get(name)?.data());
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Patience bookkeeping on a metric where larger is better.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, ..Self::default() }
    }

    /// Records the metric of 1-based `epoch`; returns whether it improved.
    pub fn update(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.best.is_some() && self.since_improvement >= self.patience
    }
}

/// Dev metrics reported after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub selection: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auc: Option<f64>,
    pub p_at_5: Option<f64>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub steps: u64,
    pub dev: DevMetrics,
    pub improved: bool,
}

/// Everything needed to continue training after an interruption. Sampling
/// randomness is derived from `(seed, epoch)`, so no RNG state is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Params,
    pub best_params: Params,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub step: u64,
    pub stopping: EarlyStopping,
    pub history: Vec<EpochLog>,
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn best_dev(&self) -> Option<f64> {
        self.stopping.best
    }

    pub fn to_checkpoint<E: ChunkEncoder>(&self, model: &Lahst<E>, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(model.config.clone());
        ck.add_params("", &self.params);
        ck.add_params("state.best.", &self.best_params);
        ck.add_params("state.m.", &self.optimizer.m);
        ck.add_params("state.v.", &self.optimizer.v);
        let md = &mut ck.metadata;
        md.insert("kind".into(), Value::from("train-state"));
        md.insert("train_config".into(), serde_json::to_value(cfg)?);
        md.insert("epoch".into(), Value::from(self.epoch));
        md.insert("step".into(), Value::from(self.step));
        md.insert("adam_t".into(), Value::from(self.optimizer.t));
        md.insert("stopping".into(), serde_json::to_value(&self.stopping)?);
        md.insert("history".into(), serde_json::to_value(&self.history)?);
        md.insert("losses".into(), serde_json::to_value(&self.losses)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let get = |k: &str| {
            ck.metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("train state is missing {k}")))
        };
        let cfg: TrainConfig = serde_json::from_value(get("train_config")?)?;
        let params = ck.params("");
        let optimizer = AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: serde_json::from_value(get("adam_t")?)?,
            m: ck.params("state.m."),
            v: ck.params("state.v."),
        };
        if optimizer.m.len() != params.len() || optimizer.v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
        }
        let state = TrainState {
            best_params: ck.params("state.best."),
            params,
            optimizer,
            epoch: serde_json::from_value(get("epoch")?)?,
            step: serde_json::from_value(get("step")?)?,
            stopping: serde_json::from_value(get("stopping")?)?,
            history: serde_json::from_value(get("history")?)?,
            losses: serde_json::from_value(get("losses")?)?,
        };
        Ok((state, cfg))
    }
}

/// Drives epochs over a fixed training and dev set.
pub struct Trainer<'a, E: ChunkEncoder> {
    pub model: Lahst<E>,
    pub config: TrainConfig,
    train: &'a [LabeledSequence],
    dev: &'a [LabeledSequence],
    prior: Vec<f64>,
}

impl<'a, E: ChunkEncoder + Clone + Sync> Trainer<'a, E> {
    pub fn new(
        model: Lahst<E>,
        config: TrainConfig,
        train: &'a [LabeledSequence],
        dev: &'a [LabeledSequence],
        prior: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Validation("training corpus is empty".into()));
        }
        Ok(Self { model, config, train, dev, prior })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.max_epochs as u64
    }

    pub fn init_state(&self) -> TrainState {
        let p = self.model.params.clone();
        TrainState {
            optimizer: AdamW::new(&p, &self.config),
            best_params: p.clone(),
            params: p,
            epoch: 0,
            step: 0,
            stopping: EarlyStopping::new(self.config.patience),
            history: Vec::new(),
            losses: Vec::new(),
        }
    }

    pub fn is_done(&self, state: &TrainState) -> bool {
        state.epoch >= self.config.max_epochs || state.stopping.should_stop()
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    fn training_view(&self, seq: &ChunkSequence, rng: &mut ChaCha8Rng) -> ChunkSequence {
        let nmax = self.config.nmax;
        match (self.config.context_strategy, self.config.sampling_unit) {
            (ContextStrategy::LastChunks, _) => seq.last(nmax),
            (ContextStrategy::RandomSubsequence, SamplingUnit::Chunk) => sample_subsequence(seq, nmax, rng),
            (ContextStrategy::RandomSubsequence, SamplingUnit::Note) => sample_notes(seq, nmax, rng),
        }
    }

    /// Loss and accumulated gradient of one training sample.
    fn sample_grad(&self, params: &Params, sample: &ChunkSequence, labels: &[u32], grads: &mut Params, weight: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let fw = self.model.forward_on_tape(&mut tape, &bound, &sample.chunks)?;
        let loss = temporal_bce(&mut tape, fw.probs, labels)?;
        tape.backward(loss)?;
        for (name, &v) in bound.iter() {
            if let (Some(g), Some(acc)) = (tape.grad(v), grads.get_mut(name)) {
                for (a, gi) in acc.data_mut().iter_mut().zip(g) {
                    *a += weight * gi;
                }
            }
        }
        Ok(tape.value(loss).data()[0])
    }

    /// One pass over the training set followed by dev evaluation.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<EpochLog> {
        let epoch = state.epoch + 1;
        let mut rng = self.epoch_rng(state.epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);

        let total = self.total_steps();
        let (mut loss_sum, mut steps, mut lr) = (0.0, 0u64, 0.0);
        for batch in order.chunks(self.config.batch_size) {
            lr = one_cycle_lr(state.step, total, self.config.peak_lr)?;
            let mut grads = state.params.zeros_like();
            let samples: Vec<(ChunkSequence, &[u32])> = batch
                .iter()
                .map(|&i| (self.training_view(&self.train[i].seq, &mut rng), self.train[i].labels.as_slice()))
                .filter(|(s, _)| !s.is_empty())
                .collect();
            if samples.is_empty() {
                continue;
            }
            let weight = 1.0 / samples.len() as f64;
            let mut batch_loss = 0.0;
            for (sample, labels) in &samples {
                if sample.len() > self.config.nmax {
                    return Err(Error::Contract(format!("sample of {} chunks exceeds nmax", sample.len())));
                }
                batch_loss += weight * self.sample_grad(&state.params, sample, labels, &mut grads, weight)?;
            }
            if !batch_loss.is_finite() || grads.iter().any(|(_, g)| g.has_nan()) {
                return Err(Error::NumericFailure {
                    step: state.step,
                    lr,
                    grad_norms: grad_norms(&grads),
                });
            }
            state.optimizer.step(&mut state.params, &grads, lr)?;
            state.step += 1;
            state.losses.push(batch_loss);
            loss_sum += batch_loss;
            steps += 1;
        }

        let dev = self.dev_metrics(&state.params)?;
        let improved = state.stopping.update(epoch, dev.selection);
        if improved {
            state.best_params = state.params.clone();
        }
        state.epoch = epoch;
        let log = EpochLog {
            epoch,
            train_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            lr,
            steps,
            dev,
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} dev micro-f1 {:.4}{}",
            log.train_loss,
            log.dev.micro_f1,
            if improved { " *" } else { "" }
        );
        state.history.push(log.clone());
        Ok(log)
    }

    pub fn model_with(&self, params: &Params) -> Lahst<E> {
        let mut m = self.model.clone();
        m.params = params.clone();
        m
    }

    fn dev_metrics(&self, params: &Params) -> Result<DevMetrics> {
        if self.dev.is_empty() {
            return Ok(DevMetrics { selection: 0.0, micro_f1: 0.0, macro_f1: 0.0, micro_auc: None, p_at_5: None });
        }
        let model = self.model_with(params);
        let inf = self.config.inference();
        let full: CutoffRow = evaluate_cutoff(&model, self.dev, "full", CutoffSpec::FullSequence, inf, &self.prior)?;
        let selection = match self.config.dev_selection {
            DevSelection::FullSequence => full.micro_f1,
            DevSelection::MeanOverCutoffs => {
                let mut vals = vec![full.micro_f1];
                let excl = evaluate_cutoff(&model, self.dev, "excl-ds", CutoffSpec::ExcludeDischargeSummary, inf, &self.prior)?;
                vals.push(excl.micro_f1);
                for &h in &self.config.dev_hours {
                    vals.push(evaluate_cutoff(&model, self.dev, "dev", CutoffSpec::hours(h)?, inf, &self.prior)?.micro_f1);
                }
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        Ok(DevMetrics {
            selection,
            micro_f1: full.micro_f1,
            macro_f1: full.macro_f1,
            micro_auc: full.micro_auc,
            p_at_5: full.p_at_5,
        })
    }

    /// Runs epochs until early stopping or `max_epochs`, calling `on_epoch`
    /// after each one.
    pub fn run(&self, state: &mut TrainState, mut on_epoch: impl FnMut(&TrainState, &EpochLog) -> Result<()>) -> Result<()> {
        while !self.is_done(state) {
            let log = self.run_epoch(state)?;
            on_epoch(state, &log)?;
        }
        Ok(())
    }
}

fn grad_norms(grads: &Params) -> String {
    let parts: BTreeMap<&String, f64> = grads
        .iter()
        .map(|(k, g)| (k, g.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    parts.iter().map(|(k, v)| format!("{k}={v:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Result of a complete training run.
pub struct TrainOutcome<E: ChunkEncoder> {
    /// Model holding the best dev parameters.
    pub model: Lahst<E>,
    pub state: TrainState,
}

/// Trains from scratch and returns the best-dev model.
pub fn train<E: ChunkEncoder + Clone + Sync>(
    model: Lahst<E>,
    config: TrainConfig,
    train: &[LabeledSequence],
    dev: &[LabeledSequence],
    prior: Vec<f64>,
) -> Result<TrainOutcome<E>> {
    let trainer = Trainer::new(model, config, train, dev, prior)?;
    let mut state = trainer.init_state();
    trainer.run(&mut state, |_, _| Ok(()))?;
    Ok(TrainOutcome { model: trainer.model_with(&state.best_params), state })
}
