//! Supervised door-parameter inference on top of pretrained (or freshly
//! initialised) encoders.

pub mod backbone;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, ModelKind};

use crate::doorworld::{DoorSet, DoorSpec};
use crate::error::{Error, Result};
use crate::nets::{Adam, Linear, Mat, Module};
use crate::seed::SeedStream;

/// Raw outputs of the parameter head, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrediction {
    pub angle_sin: f64,
    pub angle_cos: f64,
    /// Positive means "flipped" (hinge on the right).
    pub flipped_logit: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
    pub handle_offset: f64,
}

pub const PARAM_OUTPUTS: usize = 8;

impl ParamPrediction {
    pub fn from_row(r: &[f32]) -> Self {
        let v = |i: usize| r[i] as f64;
        Self {
            angle_sin: v(0),
            angle_cos: v(1),
            flipped_logit: v(2),
            origin_x: v(3),
            origin_y: v(4),
            width: v(5),
            height: v(6),
            handle_offset: v(7),
        }
    }

    /// The prediction a perfect model would make.
    pub fn exact(door: &DoorSpec, angle_deg: f64) -> Self {
        let t = angle_deg.to_radians();
        Self {
            angle_sin: t.sin(),
            angle_cos: t.cos(),
            flipped_logit: if door.flipped { 1.0 } else { -1.0 },
            origin_x: door.origin_x,
            origin_y: door.origin_y,
            width: door.width,
            height: door.height,
            handle_offset: door.handle_offset,
        }
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_sin.atan2(self.angle_cos).to_degrees()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.angle_sin,
            self.angle_cos,
            self.flipped_logit,
            self.origin_x,
            self.origin_y,
            self.width,
            self.height,
            self.handle_offset,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One fully connected layer from an embedding to the eight outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamHead {
    pub layer: Linear<f32>,
}

impl ParamHead {
    pub fn new<R: rand::Rng + ?Sized>(embedding_dim: usize, rng: &mut R) -> Self {
        Self {
            layer: Linear::new(embedding_dim, PARAM_OUTPUTS, rng),
        }
    }

    pub fn forward(&self, embedding: &[f32]) -> Result<ParamPrediction> {
        if embedding.len() != self.layer.inputs() {
            return Err(Error::invalid(format!(
                "embedding has length {}, head expects {}",
                embedding.len(),
                self.layer.inputs()
            )));
        }
        let out = self
            .layer
            .forward(&Mat::from_vec(1, embedding.len(), embedding.to_vec()));
        Ok(ParamPrediction::from_row(out.row(0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Doors per minibatch (all of their images).
    pub batch_doors: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_doors: 16,
            encoder_lr: 1e-4,
            head_lr: 1e-3,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_doors == 0 {
            return Err(Error::invalid("epochs and batch_doors must be positive"));
        }
        if !(self.encoder_lr >= 0.0 && self.head_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }
}

/// Per-image regression targets, in head output order.
fn targets(set: &DoorSet) -> Vec<[f32; PARAM_OUTPUTS]> {
    set.angles
        .iter()
        .map(|&a| {
            let t = a.to_radians();
            let d = &set.door;
            [
                t.sin() as f32,
                t.cos() as f32,
                d.flipped as u8 as f32,
                d.origin_x as f32,
                d.origin_y as f32,
                d.width as f32,
                d.height as f32,
                d.handle_offset as f32,
            ]
        })
        .collect()
}

/// Binary cross-entropy on the logit plus squared error on the seven
/// continuous targets, summed per image and averaged over the batch;
/// returns the loss and its gradient with respect to the outputs.
pub fn param_loss(out: &Mat<f32>, targets: &[[f32; PARAM_OUTPUTS]]) -> (f64, Mat<f32>) {
    let n = out.rows as f64;
    let mut grad = Mat::zeros(out.rows, PARAM_OUTPUTS);
    let mut loss = 0.0;
    for (r, t) in targets.iter().enumerate() {
        let o = out.row(r);
        let g = grad.row_mut(r);
        for j in 0..PARAM_OUTPUTS {
            let (y, p) = (t[j] as f64, o[j] as f64);
            if j == 2 {
                // log(1 + e^p) − y·p, computed stably.
                loss += p.max(0.0) + (-p.abs()).exp().ln_1p() - y * p;
                let s = 1.0 / (1.0 + (-p).exp());
                g[j] = ((s - y) / n) as f32;
            } else {
                loss += (p - y).powi(2);
                g[j] = (2.0 * (p - y) / n) as f32;
            }
        }
    }
    (loss / n, grad)
}

pub struct FinetuneResult {
    pub backbone: Backbone,
    pub head: ParamHead,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

/// Trains head and backbone end to end on labelled door sets.
pub fn finetune_params(
    mut backbone: Backbone,
    train: &[DoorSet],
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training doors"));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut head = ParamHead::new(backbone.embedding_dim(), &mut seeds.rng("param-head", 0));
    let mut enc_opt = Adam::<f32>::new(cfg.encoder_lr);
    let mut head_opt = Adam::<f32>::new(cfg.head_lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeds.rng("finetune-epoch", epoch as u64));
        let mut total = 0.0;
        let mut count = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_doors).enumerate() {
            let sets: Vec<&DoorSet> = chunk.iter().map(|&i| &train[i]).collect();
            let tgt: Vec<_> = sets.iter().flat_map(|s| targets(s)).collect();
            let (emb, tape, index) = backbone.embed(&sets)?;
            let out = head.layer.forward(&emb);
            let (loss, d_out) = param_loss(&out, &tgt);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    term: "parameter loss".into(),
                    epoch,
                    step,
                });
            }
            backbone.zero_grad();
            head.layer.zero_grad();
            let d_emb = head.layer.backward(&emb, &d_out, true).unwrap();
            backbone.backward(&tape, &index, &d_emb);
            head_opt.update(head.layer.params_mut())?;
            if cfg.encoder_lr > 0.0 {
                enc_opt.update(backbone.params_mut())?;
            }
            total += loss * tgt.len() as f64;
            count += tgt.len();
        }
        losses.push(total / count as f64);
    }
    Ok(FinetuneResult {
        backbone,
        head,
        losses,
    })
}

/// Predictions for every image of `sets`, in order.
pub fn predict_params(
    backbone: &Backbone,
    head: &ParamHead,
    sets: &[DoorSet],
) -> Result<Vec<ParamPrediction>> {
    let mut out = Vec::new();
    for chunk in sets.chunks(16) {
        let refs: Vec<&DoorSet> = chunk.iter().collect();
        let (emb, _, _) = backbone.embed(&refs)?;
        let pred = head.layer.forward(&emb);
        out.extend((0..pred.rows).map(|r| ParamPrediction::from_row(pred.row(r))));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub flipped_accuracy: f64,
    pub origin_rmse: f64,
    pub size_rmse: f64,
    pub handle_offset_rmse: f64,
    pub angle_error_deg: f64,
}

/// Absolute angular difference folded into `[0, 180]`.
pub fn circular_abs_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Per-image scoring of predictions against `(door, angle)` truths.
pub fn param_metrics(preds: &[ParamPrediction], truth: &[(DoorSpec, f64)]) -> Result<ParamMetrics> {
    if preds.is_empty() {
        return Err(Error::invalid("no test images to score"));
    }
    if preds.len() != truth.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    let n = preds.len() as f64;
    let mut correct = 0usize;
    let (mut origin, mut size, mut handle, mut angle) = (0.0, 0.0, 0.0, 0.0);
    for (p, (d, a)) in preds.iter().zip(truth) {
        correct += ((p.flipped_logit > 0.0) == d.flipped) as usize;
        origin += (p.origin_x - d.origin_x).powi(2) + (p.origin_y - d.origin_y).powi(2);
        size += (p.width - d.width).powi(2) + (p.height - d.height).powi(2);
        handle += (p.handle_offset - d.handle_offset).powi(2);
        angle += circular_abs_diff_deg(p.angle_deg(), *a);
    }
    Ok(ParamMetrics {
        flipped_accuracy: correct as f64 / n,
        origin_rmse: (origin / (2.0 * n)).sqrt(),
        size_rmse: (size / (2.0 * n)).sqrt(),
        handle_offset_rmse: (handle / n).sqrt(),
        angle_error_deg: angle / n,
    })
}

pub fn truths(sets: &[DoorSet]) -> Vec<(DoorSpec, f64)> {
    sets.iter()
        .flat_map(|s| s.angles.iter().map(move |&a| (s.door, a)))
        .collect()
}

pub fn eval_params(
    backbone: &Backbone,
    head: &ParamHead,
    test: &[DoorSet],
) -> Result<ParamMetrics> {
    let preds = predict_params(backbone, head, test)?;
    param_metrics(&preds, &truths(test))
}
