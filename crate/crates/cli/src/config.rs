//! JSON run configurations. Every document rejects unknown keys and is
//! validated before any work starts.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use doorns::bandit::RewardConfig;
use doorns::doorworld::Imagery;
use doorns::finetune::{FinetuneConfig, ModelKind};
use doorns::nets::Arch;
use doorns::pretrain::TrainConfig;

/// A configuration that failed to parse or validate (exit code 2).
#[derive(Debug)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    SchemaError(msg.into()).into()
}

pub trait RunConfig: DeserializeOwned + Serialize {
    fn set_seed(&mut self, seed: u64);
    fn validate(&self) -> anyhow::Result<()>;
}

/// Reads, overrides and validates a config; I/O failures keep their own
/// error type so they map to a different exit code.
pub fn load<C: RunConfig>(path: &Path, seed: Option<u64>) -> anyhow::Result<C> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: C =
        serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Keeps the effective configuration next to the results it produced.
pub fn save<C: RunConfig>(cfg: &C, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("config.json");
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn check(r: doorns::Result<()>) -> anyhow::Result<()> {
    r.map_err(|e| schema(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pretrain,
    Interaction,
}

fn samples_per_door() -> usize {
    doorns::doorworld::SAMPLES_PER_DOOR
}

fn image_size() -> usize {
    doorns::doorworld::IMAGE_SIZE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: DatasetKind,
    pub n_doors: usize,
    #[serde(default = "samples_per_door")]
    pub samples_per_door: usize,
    #[serde(default = "image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Interaction datasets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_actions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imagery: Option<Imagery>,
}

impl RunConfig for GenerateConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.n_doors == 0 || self.samples_per_door == 0 {
            return Err(schema("n_doors and samples_per_door must be positive"));
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(2) {
            return Err(schema("image_size must be an even number >= 8"));
        }
        match (self.kind, self.n_actions, self.imagery) {
            (DatasetKind::Pretrain, None, None) => Ok(()),
            (DatasetKind::Pretrain, _, _) => Err(schema(
                "n_actions and imagery apply to interaction datasets only",
            )),
            (DatasetKind::Interaction, Some(n), Some(_)) if n >= 5 => Ok(()),
            (DatasetKind::Interaction, Some(_), Some(_)) => {
                Err(schema("n_actions must be at least 5"))
            }
            (DatasetKind::Interaction, _, _) => Err(schema(
                "interaction datasets need n_actions and imagery (closed | open)",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentModel {
    Ns,
    Vae,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: LatentModel,
    pub dataset: PathBuf,
    /// Defaults to the full-size architecture.
    #[serde(default = "Arch::full")]
    pub arch: Arch,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig for PretrainConfig {
    fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }

    fn validate(&self) -> anyhow::Result<()> {
        check(self.arch.validate())?;
        check(self.train.validate())
    }
}

fn eight() -> usize {
    8
}

fn sixteen() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalLatentConfig {
    pub checkpoint: PathBuf,
    /// Held-out doors to reconstruct, condition on and sweep.
    pub dataset: PathBuf,
    /// Doors whose encodings set the sampling moments; defaults to `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments_dataset: Option<PathBuf>,
    #[serde(default = "eight")]
    pub n_doors: usize,
    #[serde(default = "sixteen")]
    pub n_random: usize,
    #[serde(default = "eight")]
    pub n_conditional: usize,
    /// Fixed-context sampling and z-sweeps; defaults to on for the
    /// statistician and off for the VAE, which has no context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_values: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig for EvalLatentConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.n_doors == 0 {
            return Err(schema("n_doors must be positive"));
        }
        if self.n_conditional < 2 {
            return Err(schema("n_conditional must be at least 2"));
        }
        match &self.z_values {
            Some(z) if z.is_empty() || z.iter().any(|v| !v.is_finite()) => Err(schema(
                "z_values must be a non-empty list of finite numbers",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Params,
    Reward,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRunConfig {
    pub task: Task,
    pub model: ModelKind,
    /// Pretrained checkpoint; must be absent for the reinitialised CNN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    /// One finetuning run per seed; `--seed` replaces the list.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Pretraining-set size, carried into the metrics rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pretrain: Option<usize>,
    /// CNN baseline only: feed `[image feature; set-mean feature]`.
    #[serde(default)]
    pub grouped: bool,
    /// CNN baseline architecture; defaults to the full-size encoder.
    #[serde(default = "Arch::full")]
    pub arch: Arch,
    /// Seeds inside these blocks are ignored in favour of `seeds`.
    #[serde(default)]
    pub params: FinetuneConfig,
    #[serde(default)]
    pub reward: RewardConfig,
}

impl RunConfig for FinetuneRunConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            return Err(schema("seeds must not be empty"));
        }
        match (self.model, &self.checkpoint) {
            (ModelKind::Cnn, Some(_)) => {
                return Err(schema(
                    "the cnn baseline is reinitialised; drop `checkpoint`",
                ))
            }
            (ModelKind::Ns | ModelKind::Vae, None) => {
                return Err(schema("ns and vae finetuning need a `checkpoint`"))
            }
            _ => {}
        }
        if self.grouped && self.model != ModelKind::Cnn {
            return Err(schema("`grouped` applies to the cnn baseline only"));
        }
        check(self.arch.validate())?;
        match self.task {
            Task::Params => check(self.params.validate()),
            Task::Reward => check(self.reward.validate()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveInput {
    pub label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// `summary.csv` files from parameter-inference runs.
    #[serde(default)]
    pub params_summaries: Vec<PathBuf>,
    /// `summary.csv` files from reward runs.
    #[serde(default)]
    pub reward_summaries: Vec<PathBuf>,
    #[serde(default)]
    pub recall_curves: Vec<CurveInput>,
}

impl RunConfig for ReportConfig {
    fn set_seed(&mut self, _: u64) {}

    fn validate(&self) -> anyhow::Result<()> {
        if self.params_summaries.is_empty()
            && self.reward_summaries.is_empty()
            && self.recall_curves.is_empty()
        {
            return Err(schema("nothing to report: all input lists are empty"));
        }
        Ok(())
    }
}
