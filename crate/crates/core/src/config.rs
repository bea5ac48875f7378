//! Run configuration: one TOML file with `[data]`, `[synth]`, `[model]`,
//! `[train]` and `[eval]` sections plus top-level `seed` and `out`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SynthConfig, VolumeWeighting};
use crate::error::{Error, Result};
use crate::evaluation::{CutoffRequest, InferenceContext};
use crate::inference::{CausalScope, InferenceConfig};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `train.jsonl`, `dev.jsonl` and `test.jsonl`.
    pub dir: PathBuf,
    pub volume_weighting: VolumeWeighting,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("data"), volume_weighting: VolumeWeighting::NoteCount }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cutoff keywords: hours (`48`), percentiles (`p25`), `excl-ds`, `full`.
    pub cutoffs: Vec<String>,
    /// Inference window; defaults to the training `nmax` when unset.
    pub nmax: Option<usize>,
    pub causal_scope: CausalScope,
    pub context: InferenceContext,
    pub topk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: ["p25", "p50", "p75", "excl-ds", "full"].map(String::from).to_vec(),
            nmax: None,
            causal_scope: CausalScope::WindowLocal,
            context: InferenceContext::Eca,
            topk: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Propagates the top-level seed and checks cross-section consistency.
    pub fn finalize(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.cutoff_requests()?;
        if self.eval.nmax == Some(0) {
            return Err(Error::Config("eval.nmax must be at least 1".into()));
        }
        Ok(self)
    }

    /// Fails unless the model can consume data generated by `[synth]`.
    pub fn check_model_covers_synth(&self) -> Result<()> {
        if self.model.vocab_size < self.synth.vocab_size || self.model.num_labels != self.synth.num_labels {
            return Err(Error::Config(format!(
                "model (vocab {}, labels {}) does not cover synthetic data (vocab {}, labels {})",
                self.model.vocab_size, self.model.num_labels, self.synth.vocab_size, self.synth.num_labels
            )));
        }
        Ok(())
    }

    pub fn cutoff_requests(&self) -> Result<Vec<CutoffRequest>> {
        self.eval.cutoffs.iter().map(|s| s.parse()).collect()
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig { nmax: self.eval.nmax.unwrap_or(self.train.nmax), causal_scope: self.eval.causal_scope }
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("effective_config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[train]\nnmax = 8\n[eval]\ncutoffs = [\"48\", \"full\"]\n").unwrap();
        assert_eq!(c.train.nmax, 8);
        assert_eq!(c.model, ModelConfig::default());
        let c = c.finalize().unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.cutoff_requests().unwrap(), vec![CutoffRequest::Hours(48.0), CutoffRequest::FullSequence]);
        assert_eq!(c.inference().nmax, 8);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1.0\n").is_err());
        let c = RunConfig::from_toml("[eval]\ncutoffs = [\"soon\"]\n").unwrap();
        assert!(c.finalize().is_err());
        let c = RunConfig::from_toml("[model]\nnum_labels = 5\n").unwrap();
        assert!(c.finalize().unwrap().check_model_covers_synth().is_err());
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
