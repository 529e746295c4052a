//! Minibatch Adam on the negative bound, with a held-out validation split,
//! early stopping, per-epoch history and resumable state.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::elbo::{ns_backward, ns_forward, vae_backward, vae_forward, ElboTerms, NsNoise};
use crate::doorworld::DoorSet;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nets::checkpoint::{
    copy_tensors, read_tensor_file, save_checkpoint, write_tensor_file, Model,
};
use crate::nets::gaussian::normal_noise;
use crate::nets::{images_to_fmap, Adam, NsModel, Scalar, SetIndex, VaeModel};
use crate::seed::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Door sets per statistician batch.
    pub batch_doors: usize,
    /// Images per VAE batch.
    pub batch_images: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub early_stop_patience: usize,
    /// Global gradient-norm ceiling applied before each optimiser step.
    pub max_grad_norm: Option<f64>,
    /// Epochs over which the KL weight ramps linearly from 0 to 1; 0 trains
    /// on the plain bound throughout. Reported bounds are always unweighted.
    pub kl_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_doors: 16,
            batch_images: 64,
            learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            early_stop_patience: 20,
            max_grad_norm: Some(1e5),
            kl_warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.kl_warmup_epochs == 0 {
            1.0
        } else {
            (epoch as f64 / self.kl_warmup_epochs as f64).min(1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_doors == 0 || self.batch_images == 0 {
            return Err(Error::invalid("epochs and batch sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::invalid("validation_fraction must lie in (0, 0.5]"));
        }
        if matches!(self.max_grad_norm, Some(m) if !(m > 0.0 && m.is_finite())) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be positive"));
        }
        Ok(())
    }
}

/// One row of the training history; bounds are averaged per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_elbo: f64,
    pub val_elbo: f64,
    pub kl_c: f64,
    pub kl_z: f64,
    pub recon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_elbo: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_elbo,val_elbo,kl_c,kl_z,recon\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.train_elbo, r.val_elbo, r.kl_c, r.kl_z, r.recon
            )
            .unwrap();
        }
        s
    }
}

/// Deterministic train/validation split of door indices.
pub fn split_doors(
    n_doors: usize,
    validation_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_doors).collect();
    idx.shuffle(&mut SeedStream::new(seed).rng("split", 0));
    let n_val = ((n_doors as f64 * validation_fraction).round() as usize).clamp(1, n_doors - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// A model trainable by maximising a reparameterised bound.
pub trait Trainable<T: Scalar>: Model<T> {
    /// Minibatch units: whole sets for the statistician, single images for
    /// the VAE. Each unit is `(door, image)` with `image = None` for a set.
    fn units(data: &[DoorSet], doors: &[usize]) -> Vec<(usize, Option<usize>)>;

    fn batch_size(cfg: &TrainConfig) -> usize;

    /// Summed bound over the batch and its image count; with `grad` set,
    /// also accumulates the gradient of `-Σ elbo / images`.
    fn batch(
        &mut self,
        data: &[DoorSet],
        units: &[(usize, Option<usize>)],
        rng: &mut Rng,
        kl_weight: Option<f64>,
    ) -> Result<(ElboTerms, usize)>;
}

impl<T: Scalar> Trainable<T> for NsModel<T> {
    fn units(_: &[DoorSet], doors: &[usize]) -> Vec<(usize, Option<usize>)> {
        doors.iter().map(|&d| (d, None)).collect()
    }

    fn batch_size(cfg: &TrainConfig) -> usize {
        cfg.batch_doors
    }

    fn batch(
        &mut self,
        data: &[DoorSet],
        units: &[(usize, Option<usize>)],
        rng: &mut Rng,
        kl_weight: Option<f64>,
    ) -> Result<(ElboTerms, usize)> {
        let images: Vec<Image> = units
            .iter()
            .flat_map(|&(d, _)| data[d].images.iter().cloned())
            .collect();
        let sizes: Vec<usize> = units.iter().map(|&(d, _)| data[d].images.len()).collect();
        let sets = SetIndex::from_sizes(&sizes);
        let x = images_to_fmap::<T>(&images, self.arch.image_size)?;
        let noise = NsNoise::sample(self, &sets, rng);
        let (terms, tape) = ns_forward(self, &x, &sets, &noise);
        let n = images.len();
        let total = ElboTerms::sum(&terms);
        if let (Some(w), None) = (kl_weight, total.non_finite_term()) {
            ns_backward(self, &tape, &x, &noise, 1.0 / n as f64, w);
        }
        Ok((total, n))
    }
}

impl<T: Scalar> Trainable<T> for VaeModel<T> {
    fn units(data: &[DoorSet], doors: &[usize]) -> Vec<(usize, Option<usize>)> {
        doors
            .iter()
            .flat_map(|&d| (0..data[d].images.len()).map(move |k| (d, Some(k))))
            .collect()
    }

    fn batch_size(cfg: &TrainConfig) -> usize {
        cfg.batch_images
    }

    fn batch(
        &mut self,
        data: &[DoorSet],
        units: &[(usize, Option<usize>)],
        rng: &mut Rng,
        kl_weight: Option<f64>,
    ) -> Result<(ElboTerms, usize)> {
        let images: Vec<Image> = units
            .iter()
            .map(|&(d, k)| data[d].images[k.expect("image unit")].clone())
            .collect();
        let x = images_to_fmap::<T>(&images, self.arch.image_size)?;
        let eps = normal_noise(images.len(), self.dim_latent(), rng);
        let (terms, tape) = vae_forward(self, &x, &eps);
        let n = images.len();
        let total = ElboTerms::sum(&terms);
        if let (Some(w), None) = (kl_weight, total.non_finite_term()) {
            vae_backward(self, &tape, &x, &eps, 1.0 / n as f64, w);
        }
        Ok((total, n))
    }
}

/// Where the loop keeps its artefacts.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn last_state(&self) -> PathBuf {
        self.dir.join("last_state.bin")
    }
    pub fn history_csv(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
}

#[derive(Serialize, Deserialize)]
struct ResumeMeta {
    dtype: String,
    arch_hash: String,
    config: TrainConfig,
    history: History,
    stale_epochs: usize,
    adam_step: u64,
}

pub struct TrainResult<M> {
    /// Parameters from the epoch with the best validation bound.
    pub best: M,
    pub history: History,
}

fn evaluate<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    data: &[DoorSet],
    units: &[(usize, Option<usize>)],
    batch: usize,
    seed: &SeedStream,
) -> Result<ElboTerms> {
    // Fixed noise across epochs keeps the validation curve comparable.
    let mut rng = seed.rng("validation", 0);
    let mut total = Vec::new();
    let mut n = 0;
    for chunk in units.chunks(batch) {
        let (t, k) = model.batch(data, chunk, &mut rng, None)?;
        total.push(t);
        n += k;
    }
    Ok(ElboTerms::sum(&total).scaled(1.0 / n as f64))
}

/// Trains `model` in place and returns the best-validation copy.
///
/// When `output` is given the best checkpoint, the history CSV and a
/// resumable state are written after every epoch, and an existing state in
/// that directory is picked up where it left off.
pub fn train<T: Scalar, M: Trainable<T> + Clone>(
    model: &mut M,
    data: &[DoorSet],
    cfg: &TrainConfig,
    output: Option<&TrainOutput>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainResult<M>> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("training needs at least two doors"));
    }
    let seed = SeedStream::new(cfg.seed);
    let (train_doors, val_doors) = split_doors(data.len(), cfg.validation_fraction, cfg.seed);
    let train_units = M::units(data, &train_doors);
    let val_units = M::units(data, &val_doors);
    let batch = M::batch_size(cfg);

    let mut adam = Adam::<T>::new(cfg.learning_rate);
    adam.max_grad_norm = cfg.max_grad_norm;
    let mut history = History {
        records: Vec::new(),
        best_epoch: 0,
        best_val_elbo: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut stale = 0;
    let mut best = model.clone();

    if let Some(out) = output {
        if out.last_state().exists() {
            stale = resume(model, &mut adam, &mut history, cfg, &out.last_state())?;
            if out.best_checkpoint().exists() {
                crate::nets::restore_checkpoint(&mut best, &out.best_checkpoint())?;
            }
        }
    }

    let start = history.records.len();
    for epoch in start..cfg.epochs {
        if history.stopped_early {
            break;
        }
        let mut rng = seed.rng("epoch", epoch as u64);
        let kl_weight = cfg.kl_weight(epoch);
        let mut order = train_units.clone();
        order.shuffle(&mut rng);
        let mut terms = Vec::new();
        let mut n_images = 0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            model.zero_grad();
            let (t, n) = model.batch(data, chunk, &mut rng, Some(kl_weight))?;
            if let Some(term) = t.non_finite_term() {
                return Err(Error::NonFinite {
                    term: term.into(),
                    epoch,
                    step,
                });
            }
            adam.update(model.params_mut())?;
            terms.push(t);
            n_images += n;
        }
        let train_terms = ElboTerms::sum(&terms).scaled(1.0 / n_images as f64);
        let val = evaluate(model, data, &val_units, batch, &seed)?;
        if let Some(term) = val.non_finite_term() {
            return Err(Error::NonFinite {
                term: format!("validation {term}"),
                epoch,
                step: 0,
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_elbo: train_terms.elbo,
            val_elbo: val.elbo,
            kl_c: train_terms.kl_c,
            kl_z: train_terms.kl_z,
            recon: train_terms.reconstruction,
        };
        history.records.push(record);
        if val.elbo > history.best_val_elbo {
            history.best_val_elbo = val.elbo;
            history.best_epoch = epoch + 1;
            best = model.clone();
            stale = 0;
            if let Some(out) = output {
                let meta = serde_json::json!({
                    "epoch": epoch + 1,
                    "val_elbo": val.elbo,
                    "config": cfg,
                });
                save_checkpoint(&best, &out.best_checkpoint(), meta)?;
            }
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                history.stopped_early = true;
            }
        }
        if let Some(out) = output {
            write_history(&history, &out.history_csv())?;
            save_state(model, &adam, &history, cfg, stale, &out.last_state())?;
        }
        on_epoch(&record);
    }
    Ok(TrainResult { best, history })
}

fn write_history(history: &History, path: &Path) -> Result<()> {
    fs::write(path, history.to_csv()).map_err(|e| Error::io(path, e))
}

fn save_state<T: Scalar, M: Model<T>>(
    model: &M,
    adam: &Adam<T>,
    history: &History,
    cfg: &TrainConfig,
    stale: usize,
    path: &Path,
) -> Result<()> {
    let meta = ResumeMeta {
        dtype: T::DTYPE.into(),
        arch_hash: model.arch_hash(),
        config: cfg.clone(),
        history: history.clone(),
        stale_epochs: stale,
        adam_step: adam.step,
    };
    let params = model.params();
    let mut tensors: Vec<(String, &[usize], &[T])> = Vec::new();
    let lens: Vec<[usize; 1]> = params.iter().map(|(_, p)| [p.len()]).collect();
    for (i, (name, p)) in params.iter().enumerate() {
        tensors.push((name.clone(), &p.shape, &p.value));
        if let (Some(m), Some(v)) = (adam.m.get(i), adam.v.get(i)) {
            tensors.push((format!("adam.m.{name}"), &lens[i], m));
            tensors.push((format!("adam.v.{name}"), &lens[i], v));
        }
    }
    write_tensor_file(path, &serde_json::to_value(&meta).unwrap(), &tensors)
}

fn resume<T: Scalar, M: Model<T>>(
    model: &mut M,
    adam: &mut Adam<T>,
    history: &mut History,
    cfg: &TrainConfig,
    path: &Path,
) -> Result<usize> {
    let file = read_tensor_file::<T>(path)?;
    let meta: ResumeMeta =
        serde_json::from_value(file.meta.clone()).map_err(|e| Error::format(path, e))?;
    if meta.arch_hash != model.arch_hash() {
        return Err(Error::ArchitectureMismatch {
            expected: model.arch_hash(),
            found: meta.arch_hash,
        });
    }
    if meta.config != *cfg {
        return Err(Error::invalid(format!(
            "{} was written with a different training config",
            path.display()
        )));
    }
    copy_tensors(model, &file.tensors, path)?;
    if meta.adam_step > 0 {
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let get = |key: String| {
            file.tensors
                .get(&key)
                .map(|t| t.data.clone())
                .ok_or_else(|| Error::format(path, format!("missing tensor {key}")))
        };
        adam.m = names
            .iter()
            .map(|n| get(format!("adam.m.{n}")))
            .collect::<Result<_>>()?;
        adam.v = names
            .iter()
            .map(|n| get(format!("adam.v.{n}")))
            .collect::<Result<_>>()?;
    }
    adam.step = meta.adam_step;
    *history = meta.history;
    Ok(meta.stale_epochs)
}
