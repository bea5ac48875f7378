//! The `lahst` command line: `gen-data`, `train`, `eval`, `predict` and
//! `inspect-attention`. Each command is also callable as a function.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::config::{sha256_hex, RunConfig};
use crate::corpus::io::{read_corpus, write_jsonl};
use crate::corpus::{chunk_corpus, generate_corpus, label_prior, truncate_to_cutoff, LabeledSequence, PatientStay};
use crate::error::{Error, Result};
use crate::evaluation::{
    attention_summary, context_strategy_ablation, evaluate_at_cutoffs, resolve_cutoffs, scores_with_context, top_k,
    AblationReport, AttentionSummary, InferenceContext, MetricsReport, NamedCutoff, ReportMetadata, DEFAULT_THRESHOLD,
};
use crate::inference::CausalScope;
use crate::model::Lahst;
use crate::training::{ContextStrategy, TrainState, Trainer};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Parser, Debug)]
#[command(name = "lahst", version, about = "Temporal multi-label prediction over timestamped note sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Values given here win over the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset directory holding train/dev/test.jsonl.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma list of hours plus `pNN`, `excl-ds` and `full`.
    #[arg(long)]
    pub cutoffs: Option<String>,
    /// Training: `random` or `last`. Inference: `last`, `random` or `eca`.
    #[arg(long)]
    pub context_strategy: Option<String>,
    #[arg(long)]
    pub causal_scope: Option<CausalScope>,
    #[arg(long)]
    pub nmax: Option<usize>,
    #[arg(long)]
    pub topk: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus split 80/10/10 by stay-id hash.
    GenData {
        #[command(flatten)]
        common: Overrides,
        /// Overwrite existing dataset files.
        #[arg(long)]
        force: bool,
    },
    /// Train on `<data>/train.jsonl`, selecting on `<data>/dev.jsonl`.
    Train {
        #[command(flatten)]
        common: Overrides,
        /// Continue from `<out>/train_state.bin`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a split at every cutoff.
    Eval {
        #[command(flatten)]
        common: Overrides,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also produce the Last/Random/ECA context grid.
        #[arg(long)]
        ablate_context: bool,
    },
    /// Per-stay probabilities and top-k codes as JSON lines.
    Predict {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stay file in the dataset JSONL format.
        #[arg(long)]
        stays: PathBuf,
    },
    /// Mean label-attention weight per note category.
    InspectAttention {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<data>/test.jsonl`.
        #[arg(long)]
        stays: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Train,
    Infer,
}

impl Overrides {
    fn apply(&self, stage: Stage) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data.dir = d.clone();
        }
        if let Some(c) = &self.cutoffs {
            cfg.eval.cutoffs = c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(s) = self.causal_scope {
            cfg.eval.causal_scope = s;
        }
        if let Some(k) = self.topk {
            cfg.eval.topk = k;
        }
        match stage {
            Stage::Train => {
                if let Some(s) = &self.context_strategy {
                    cfg.train.context_strategy = s.parse::<ContextStrategy>()?;
                }
                if let Some(n) = self.nmax {
                    cfg.train.nmax = n;
                }
            }
            Stage::Infer => {
                if let Some(s) = &self.context_strategy {
                    cfg.eval.context = s.parse()?;
                }
                if self.nmax.is_some() {
                    cfg.eval.nmax = self.nmax;
                }
            }
        }
        cfg.finalize()
    }
}

/// Generation record written next to the dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_hash: String,
    pub counts: BTreeMap<String, usize>,
    pub files: BTreeMap<String, String>,
}

/// Orders stays by the SHA-256 of their id and cuts 80/10/10.
pub fn split_by_hash(mut stays: Vec<PatientStay>) -> [Vec<PatientStay>; 3] {
    stays.sort_by_cached_key(|s| sha256_hex(s.stay_id.as_bytes()));
    let n = stays.len();
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_dev = (n as f64 * 0.1).round() as usize;
    let test = stays.split_off(n_train + n_dev);
    let dev = stays.split_off(n_train);
    [stays, dev, test]
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<DatasetManifest> {
    cfg.check_model_covers_synth()?;
    let out = &cfg.out;
    let targets: Vec<PathBuf> = SPLITS
        .iter()
        .map(|s| out.join(format!("{s}.jsonl")))
        .chain([out.join("manifest.json")])
        .collect();
    if !force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Error::Validation(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    cfg.write_effective(out)?;
    let stays = generate_corpus(&cfg.synth, cfg.seed)?;
    let mut manifest = DatasetManifest {
        seed: cfg.seed,
        config_hash: sha256_hex(toml::to_string(&cfg.synth).map_err(|e| Error::Config(e.to_string()))?.as_bytes()),
        counts: BTreeMap::new(),
        files: BTreeMap::new(),
    };
    for (name, part) in SPLITS.iter().zip(split_by_hash(stays)) {
        let file = format!("{name}.jsonl");
        let path = out.join(&file);
        write_jsonl(&path, &part)?;
        manifest.counts.insert(name.to_string(), part.len());
        manifest.files.insert(file, sha256_hex(&fs::read(&path)?));
    }
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    log::info!("wrote {:?} stays to {}", manifest.counts, out.display());
    Ok(manifest)
}

pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<PatientStay>> {
    read_corpus(&cfg.data.dir.join(format!("{split}.jsonl")), cfg.model.vocab_size, cfg.model.num_labels)
}

fn resolve_for(cfg: &RunConfig) -> Result<Vec<NamedCutoff>> {
    let requests = cfg.cutoff_requests()?;
    let needs_train = requests.iter().any(|r| matches!(r, crate::evaluation::CutoffRequest::Percentile(_)));
    let train = if needs_train { load_split(cfg, "train")? } else { Vec::new() };
    resolve_cutoffs(&requests, &train, cfg.data.volume_weighting)
}

fn write_jsonl_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for it in items {
        text.push_str(&serde_json::to_string(it)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    fs::write(dir.join(format!("{stem}.txt")), report.to_table())?;
    fs::write(dir.join(format!("{stem}.json")), report.to_json()? + "\n")?;
    Ok(())
}

fn checkpoint_id(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

fn metadata(cfg: &RunConfig, checkpoint_id: String) -> ReportMetadata {
    ReportMetadata {
        seed: cfg.seed,
        checkpoint_id,
        context_strategy: cfg.eval.context.name().to_string(),
        causal_scope: cfg.eval.causal_scope.to_string(),
        nmax: cfg.inference().nmax,
        threshold: DEFAULT_THRESHOLD,
    }
}

/// What `train` leaves behind.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub finished: bool,
    pub best_epoch: usize,
    pub best_dev: Option<f64>,
    pub dev_report: Option<MetricsReport>,
}

/// Trains and writes `effective_config.toml`, `train_log.jsonl`,
/// `train_state.bin` and, once training ends, `checkpoint.bin` and
/// `dev_report.{txt,json}` into `cfg.out`.
pub fn train_run(cfg: &RunConfig, resume: bool, stop_after: Option<usize>) -> Result<TrainSummary> {
    let out = &cfg.out;
    let train_stays = load_split(cfg, "train")?;
    let dev_stays = load_split(cfg, "dev")?;
    let t = cfg.model.chunk_tokens;
    let train = chunk_corpus(&train_stays, t)?;
    let dev = chunk_corpus(&dev_stays, t)?;
    let prior = label_prior(&train_stays, cfg.model.num_labels);
    cfg.write_effective(out)?;

    let model = Lahst::new(cfg.model.clone(), cfg.seed)?;
    let trainer = Trainer::new(model, cfg.train.clone(), &train, &dev, prior.clone())?;
    let state_path = out.join("train_state.bin");
    let mut state = if resume {
        let ck = Checkpoint::load(&state_path)?;
        if ck.hyperparameters != cfg.model {
            return Err(Error::Config("model settings differ from the saved training state".into()));
        }
        let (state, saved) = TrainState::from_checkpoint(&ck)?;
        if saved != cfg.train {
            return Err(Error::Config("training settings differ from the saved training state".into()));
        }
        trainer.model.clone().set_params(state.params.clone())?;
        log::info!("resuming after epoch {}", state.epoch);
        state
    } else {
        trainer.init_state()
    };

    let mut ran = 0;
    while !trainer.is_done(&state) && stop_after.is_none_or(|n| ran < n) {
        trainer.run_epoch(&mut state)?;
        ran += 1;
        state.to_checkpoint(&trainer.model, &cfg.train)?.save(&state_path)?;
        write_jsonl_lines(&out.join("train_log.jsonl"), &state.history)?;
    }
    let finished = trainer.is_done(&state);
    let mut summary = TrainSummary {
        epochs: state.epoch,
        finished,
        best_epoch: state.stopping.best_epoch,
        best_dev: state.best_dev(),
        dev_report: None,
    };
    if !finished {
        log::info!("stopped after epoch {}; continue with --resume", state.epoch);
        return Ok(summary);
    }

    let best = trainer.model_with(&state.best_params);
    let mut ck = Checkpoint::from_model(&best, &prior);
    ck.metadata.insert("kind".into(), Value::from("model"));
    ck.metadata.insert("seed".into(), Value::from(cfg.seed));
    ck.metadata.insert("best_epoch".into(), Value::from(state.stopping.best_epoch));
    ck.metadata.insert("best_dev".into(), serde_json::to_value(state.best_dev())?);
    ck.metadata.insert("train_config".into(), serde_json::to_value(&cfg.train)?);
    let bytes = ck.to_bytes()?;
    fs::write(out.join("checkpoint.bin"), &bytes)?;

    let cutoffs = resolve_cutoffs(&cfg.cutoff_requests()?, &train_stays, cfg.data.volume_weighting)?;
    let report = evaluate_at_cutoffs(
        &best,
        &dev,
        &cutoffs,
        cfg.inference(),
        &prior,
        cfg.eval.context,
        metadata(cfg, checkpoint_id(&bytes)),
    )?;
    write_report(out, "dev_report", &report)?;
    summary.dev_report = Some(report);
    Ok(summary)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<(Lahst, Vec<f64>, String)> {
    let bytes = fs::read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    if ck.hyperparameters != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint {} was built with different model settings than the configuration",
            path.display()
        )));
    }
    Ok((ck.model()?, ck.prior()?, checkpoint_id(&bytes)))
}

/// With no config file the model settings come from the checkpoint.
fn adopt_checkpoint_model(cfg: &mut RunConfig, path: &Path) -> Result<()> {
    cfg.model = Checkpoint::load(path)?.hyperparameters;
    Ok(())
}

fn chunk_stays(cfg: &RunConfig, stays: &[PatientStay]) -> Result<Vec<LabeledSequence>> {
    chunk_corpus(stays, cfg.model.chunk_tokens)
}

/// Evaluates `split` and writes `report.{txt,json}` (plus
/// `ablation.{txt,json}` when asked) into `cfg.out`.
pub fn eval_run(cfg: &RunConfig, checkpoint: &Path, split: &str, ablate: bool) -> Result<(MetricsReport, Option<AblationReport>)> {
    let (model, prior, id) = load_model(cfg, checkpoint)?;
    let data = chunk_stays(cfg, &load_split(cfg, split)?)?;
    let cutoffs = resolve_for(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let report = evaluate_at_cutoffs(&model, &data, &cutoffs, cfg.inference(), &prior, cfg.eval.context, metadata(cfg, id))?;
    write_report(&cfg.out, "report", &report)?;
    let ablation = if ablate {
        let grid = context_strategy_ablation(&model, &data, &cutoffs, &InferenceContext::ALL, cfg.inference(), &prior, cfg.seed)?;
        fs::write(cfg.out.join("ablation.txt"), grid.to_table())?;
        fs::write(cfg.out.join("ablation.json"), serde_json::to_string_pretty(&grid)? + "\n")?;
        Some(grid)
    } else {
        None
    };
    Ok((report, ablation))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopCode {
    pub label: usize,
    pub probability: f64,
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stay_id: String,
    pub cutoff: String,
    pub probabilities: Vec<f64>,
    pub top_k: Vec<TopCode>,
    /// No chunks survived the cutoff; the label prior was returned.
    pub used_prior: bool,
}

/// Predicts every stay in `stays` at every configured cutoff and writes
/// `predictions.jsonl` into `cfg.out`.
pub fn predict_run(cfg: &RunConfig, checkpoint: &Path, stays: &Path) -> Result<Vec<Prediction>> {
    let (model, prior, _) = load_model(cfg, checkpoint)?;
    let data = chunk_stays(cfg, &read_corpus(stays, cfg.model.vocab_size, cfg.model.num_labels)?)?;
    let cutoffs = resolve_for(cfg)?;
    let mut out = Vec::new();
    for c in &cutoffs {
        let (scores, _) = scores_with_context(&model, &data, c.spec, cfg.inference(), &prior, cfg.eval.context, cfg.seed)?;
        for (i, s) in data.iter().enumerate() {
            let used_prior = truncate_to_cutoff(&s.seq, c.spec).is_empty();
            if used_prior {
                log::warn!("stay {} has no notes before cutoff {}; returning the label prior", s.seq.stay_id, c.name);
            }
            let probs = scores.row(i).to_vec();
            let top = top_k(&probs, cfg.eval.topk)
                .into_iter()
                .map(|l| TopCode { label: l, probability: probs[l] })
                .collect();
            out.push(Prediction {
                stay_id: s.seq.stay_id.clone(),
                cutoff: c.name.clone(),
                probabilities: probs,
                top_k: top,
                used_prior,
            });
        }
    }
    fs::create_dir_all(&cfg.out)?;
    write_jsonl_lines(&cfg.out.join("predictions.jsonl"), &out)?;
    Ok(out)
}

/// Writes `attention_<cutoff>.csv` into `cfg.out` for every cutoff.
pub fn inspect_attention_run(cfg: &RunConfig, checkpoint: &Path, stays: &Path) -> Result<Vec<AttentionSummary>> {
    let (model, _, _) = load_model(cfg, checkpoint)?;
    let data = chunk_stays(cfg, &read_corpus(stays, cfg.model.vocab_size, cfg.model.num_labels)?)?;
    fs::create_dir_all(&cfg.out)?;
    resolve_for(cfg)?
        .iter()
        .map(|c| {
            let s = attention_summary(&model, &data, c, cfg.inference())?;
            fs::write(cfg.out.join(format!("attention_{}.csv", c.name)), s.to_csv())?;
            Ok(s)
        })
        .collect()
}

fn checkpoint_path(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out.join("checkpoint.bin"))
}

fn inference_config(common: &Overrides, checkpoint: &Option<PathBuf>) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = common.apply(Stage::Infer)?;
    let path = checkpoint_path(&cfg, checkpoint);
    if common.config.is_none() {
        adopt_checkpoint_model(&mut cfg, &path)?;
    }
    Ok((cfg, path))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, force } => {
            let cfg = common.apply(Stage::Infer)?;
            let m = gen_data(&cfg, force)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Train { common, resume, stop_after } => {
            let cfg = common.apply(Stage::Train)?;
            let s = train_run(&cfg, resume, stop_after)?;
            match s.dev_report {
                Some(r) => print!("{}", r.to_table()),
                None => println!("paused after epoch {}", s.epochs),
            }
        }
        Command::Eval { common, checkpoint, split, ablate_context } => {
            let (cfg, path) = inference_config(&common, &checkpoint)?;
            let (report, grid) = eval_run(&cfg, &path, &split, ablate_context)?;
            print!("{}", report.to_table());
            if let Some(g) = grid {
                print!("\n{}", g.to_table());
            }
        }
        Command::Predict { common, checkpoint, stays } => {
            let (cfg, path) = inference_config(&common, &checkpoint)?;
            let preds = predict_run(&cfg, &path, &stays)?;
            for p in &preds {
                println!("{}", serde_json::to_string(p)?);
            }
        }
        Command::InspectAttention { common, checkpoint, stays } => {
            let (cfg, path) = inference_config(&common, &checkpoint)?;
            let stays = stays.unwrap_or_else(|| cfg.data.dir.join("test.jsonl"));
            for s in inspect_attention_run(&cfg, &path, &stays)? {
                println!("# {}\n{}", s.cutoff, s.to_csv());
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Log verbosity comes from `LAHST_LOG` (default `info`).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().filter_or("LAHST_LOG", "info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
