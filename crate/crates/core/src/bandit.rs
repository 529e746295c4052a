//! Reward prediction over (door images, action) pairs and one-shot policy
//! selection scored by normalised regret.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::doorworld::{Action, DoorSet, InteractionDataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::finetune::Backbone;
use crate::nets::{Adam, Mat, Mlp, Module};
use crate::seed::SeedStream;

pub const REWARD_HIDDEN: usize = 256;
/// Doors whose best sampled reward is below this are left out of regret.
pub const MIN_BEST_REWARD: f64 = 1e-6;

/// `[embedding; scaled action] → 256 → 256 → 1` with ELU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHead {
    pub mlp: Mlp<f32>,
}

impl RewardHead {
    pub fn new<R: rand::Rng + ?Sized>(embedding_dim: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(
                &[embedding_dim + 3, REWARD_HIDDEN, REWARD_HIDDEN, 1],
                false,
                rng,
            ),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.inputs() - 3
    }

    pub fn forward(&self, embedding: &[f32], action: &Action) -> Result<f64> {
        if embedding.len() != self.embedding_dim() {
            return Err(Error::invalid(format!(
                "embedding has length {}, head expects {}",
                embedding.len(),
                self.embedding_dim()
            )));
        }
        if !action.is_valid() {
            return Err(Error::invalid("invalid action"));
        }
        let mut row = embedding.to_vec();
        row.extend(action.features().iter().map(|&f| f as f32));
        Ok(self.mlp.forward(&Mat::from_vec(1, row.len(), row)).data[0] as f64)
    }
}

/// Rows `[emb_i; action_a]` for every image `i` of every door and every one
/// of that door's actions, ordered door → action → image.
fn pair_rows(emb: &Mat<f32>, doors: &[(std::ops::Range<usize>, &[InteractionRecord])]) -> Mat<f32> {
    let cols = emb.cols + 3;
    let mut data = Vec::new();
    for (images, records) in doors {
        for r in records.iter() {
            let f = r.action().features();
            for i in images.clone() {
                data.extend_from_slice(emb.row(i));
                data.extend(f.iter().map(|&v| v as f32));
            }
        }
    }
    let rows = data.len() / cols;
    Mat::from_vec(rows, cols, data)
}

/// Door-level predictions: the head output averaged over the door's images.
fn door_predictions(
    out: &Mat<f32>,
    doors: &[(std::ops::Range<usize>, &[InteractionRecord])],
) -> Vec<f64> {
    let mut preds = Vec::new();
    let mut row = 0;
    for (images, records) in doors {
        let s = images.len();
        for _ in records.iter() {
            preds.push(
                out.data[row..row + s]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / s as f64,
            );
            row += s;
        }
    }
    preds
}

fn image_ranges(sets: &[&DoorSet]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    sets.iter()
        .map(|s| {
            let r = start..start + s.len();
            start += s.len();
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub epochs: usize,
    /// Doors per minibatch, each with all of its actions.
    pub batch_doors: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_doors: 4,
            encoder_lr: 1e-4,
            head_lr: 1e-3,
            seed: 0,
        }
    }
}

impl RewardConfig {
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

pub struct RewardResult {
    pub backbone: Backbone,
    pub head: RewardHead,
    /// Mean squared reward error per epoch.
    pub losses: Vec<f64>,
}

/// Squared-error regression of realised rewards, head and backbone jointly.
pub fn finetune_reward(
    mut backbone: Backbone,
    data: &InteractionDataset,
    cfg: &RewardConfig,
) -> Result<RewardResult> {
    cfg.validate()?;
    if data.records.is_empty() || data.sets.is_empty() {
        return Err(Error::invalid("no interaction records"));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut head = RewardHead::new(backbone.embedding_dim(), &mut seeds.rng("reward-head", 0));
    let mut enc_opt = Adam::<f32>::new(cfg.encoder_lr);
    let mut head_opt = Adam::<f32>::new(cfg.head_lr);
    let mut order: Vec<usize> = (0..data.sets.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeds.rng("reward-epoch", epoch as u64));
        let (mut total, mut count) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_doors).enumerate() {
            let sets: Vec<&DoorSet> = chunk.iter().map(|&d| &data.sets[d]).collect();
            let doors: Vec<_> = image_ranges(&sets)
                .into_iter()
                .zip(chunk.iter().map(|&d| data.records_for(d)))
                .collect();
            let (emb, tape, index) = backbone.embed(&sets)?;
            let x = pair_rows(&emb, &doors);
            let (out, cache) = head.mlp.forward_cached(&x);
            let preds = door_predictions(&out, &doors);
            let rewards: Vec<f64> = doors
                .iter()
                .flat_map(|(_, r)| r.iter().map(|r| r.reward))
                .collect();
            let n = preds.len() as f64;
            let loss = preds
                .iter()
                .zip(&rewards)
                .map(|(p, r)| (p - r).powi(2))
                .sum::<f64>()
                / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    term: "reward loss".into(),
                    epoch,
                    step,
                });
            }
            // d loss / d out for every image row of a pair.
            let mut d_out = Mat::zeros(out.rows, 1);
            let mut row = 0;
            let mut k = 0;
            for (images, records) in &doors {
                let s = images.len();
                for _ in records.iter() {
                    let g = (2.0 * (preds[k] - rewards[k]) / (n * s as f64)) as f32;
                    d_out.data[row..row + s].iter_mut().for_each(|v| *v = g);
                    row += s;
                    k += 1;
                }
            }
            backbone.zero_grad();
            head.mlp.zero_grad();
            let d_x = head.mlp.backward(&cache, &d_out, true).unwrap();
            let mut d_emb = Mat::zeros(emb.rows, emb.cols);
            let mut row = 0;
            for (images, records) in &doors {
                for _ in records.iter() {
                    for i in images.clone() {
                        let src = &d_x.row(row)[..emb.cols];
                        d_emb
                            .row_mut(i)
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                        row += 1;
                    }
                }
            }
            backbone.backward(&tape, &index, &d_emb);
            head_opt.update(head.mlp.params_mut())?;
            if cfg.encoder_lr > 0.0 {
                enc_opt.update(backbone.params_mut())?;
            }
            total += loss * n;
            count += preds.len();
        }
        losses.push(total / count as f64);
    }
    Ok(RewardResult {
        backbone,
        head,
        losses,
    })
}

/// Predicted rewards for every record of every door, grouped by door.
pub fn predict_rewards(
    backbone: &Backbone,
    head: &RewardHead,
    data: &InteractionDataset,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.sets.len());
    let ids: Vec<usize> = (0..data.sets.len()).collect();
    for chunk in ids.chunks(4) {
        let sets: Vec<&DoorSet> = chunk.iter().map(|&d| &data.sets[d]).collect();
        let doors: Vec<_> = image_ranges(&sets)
            .into_iter()
            .zip(chunk.iter().map(|&d| data.records_for(d)))
            .collect();
        let (emb, _, _) = backbone.embed(&sets)?;
        let preds = door_predictions(&head.mlp.forward(&pair_rows(&emb, &doors)), &doors);
        let mut it = preds.into_iter();
        for (_, records) in &doors {
            out.push(it.by_ref().take(records.len()).collect());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub reward_rmse: f64,
    pub regret_top1: f64,
    pub regret_top5: f64,
    /// Entry `n − 1`: fraction of doors whose best action ranks in the top `n`.
    pub recall_at_n: Vec<f64>,
    pub n_doors_evaluated: usize,
    pub n_doors_excluded: usize,
}

/// Action indices by descending prediction; equal predictions keep index order.
pub fn rank_actions(predictions: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..predictions.len()).collect();
    idx.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(a.cmp(&b)));
    idx
}

/// Scores per-door predicted rewards against realised ones.
pub fn regret_report(predictions: &[Vec<f64>], rewards: &[Vec<f64>]) -> Result<RegretReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("no doors to evaluate"));
    }
    if predictions.len() != rewards.len() {
        return Err(Error::invalid("prediction and reward door counts differ"));
    }
    let n_actions = rewards[0].len();
    if n_actions < 5 {
        return Err(Error::invalid("every door needs at least five actions"));
    }
    let (mut sq, mut pairs) = (0.0, 0usize);
    let (mut top1, mut top5) = (0.0, 0.0);
    let mut hits = vec![0usize; n_actions];
    let (mut evaluated, mut excluded) = (0usize, 0usize);
    for (p, r) in predictions.iter().zip(rewards) {
        if p.len() != n_actions || r.len() != n_actions {
            return Err(Error::invalid(
                "every door must have the same number of actions",
            ));
        }
        if p.iter().chain(r).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite reward or prediction"));
        }
        sq += p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        pairs += n_actions;
        let best = rank_actions(r)[0];
        let r_star = r[best];
        if r_star < MIN_BEST_REWARD {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let ranked = rank_actions(p);
        let regret = |a: usize| (r_star - r[a]) / r_star;
        top1 += regret(ranked[0]);
        top5 += ranked[..5].iter().map(|&a| regret(a)).sum::<f64>() / 5.0;
        let pos = ranked.iter().position(|&a| a == best).unwrap();
        hits[pos] += 1;
    }
    if evaluated == 0 {
        return Err(Error::invalid("every door has a zero best reward"));
    }
    let mut cum = 0;
    let recall_at_n = hits
        .iter()
        .map(|&h| {
            cum += h;
            cum as f64 / evaluated as f64
        })
        .collect();
    Ok(RegretReport {
        reward_rmse: (sq / pairs as f64).sqrt(),
        regret_top1: top1 / evaluated as f64,
        regret_top5: top5 / evaluated as f64,
        recall_at_n,
        n_doors_evaluated: evaluated,
        n_doors_excluded: excluded,
    })
}

pub fn realized_rewards(data: &InteractionDataset) -> Vec<Vec<f64>> {
    (0..data.sets.len())
        .map(|d| data.records_for(d).iter().map(|r| r.reward).collect())
        .collect()
}

pub fn eval_regret(
    backbone: &Backbone,
    head: &RewardHead,
    data: &InteractionDataset,
) -> Result<RegretReport> {
    let preds = predict_rewards(backbone, head, data)?;
    regret_report(&preds, &realized_rewards(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(
            rank_actions(&[1.0, 3.0, 3.0, 0.0, 1.0]),
            vec![1, 2, 0, 4, 3]
        );
    }

    #[test]
    fn single_door_regret_arithmetic() {
        let r = vec![0.5, 0.25, 0.1, 0.0, 0.05];
        let p = vec![0.0, 1.0, 0.5, 0.4, 0.3];
        let rep = regret_report(&[p], &[r]).unwrap();
        assert!((rep.regret_top1 - 0.5).abs() < 1e-12);
        // ranks: 1, 2, 3, 4, 0 → regrets .5, .8, 1, .9, 0
        assert!((rep.regret_top5 - 3.2 / 5.0).abs() < 1e-12);
        assert_eq!(rep.recall_at_n, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_best_doors_are_counted_not_scored() {
        let zero = vec![0.0; 5];
        let good = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let rep = regret_report(&[good.clone(), good.clone()], &[zero, good]).unwrap();
        assert_eq!((rep.n_doors_evaluated, rep.n_doors_excluded), (1, 1));
        assert_eq!(rep.regret_top1, 0.0);
    }

    #[test]
    fn rejects_short_or_empty_input() {
        assert!(regret_report(&[], &[]).is_err());
        assert!(regret_report(&[vec![0.0; 4]], &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn zero_weight_head_predicts_zero() {
        let mut head = RewardHead::new(4, &mut rand::rng());
        for (_, p) in head.mlp.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let a = Action {
            axis_x: 0.1,
            radius: 0.2,
            goal_deg: 90.0,
        };
        assert_eq!(head.forward(&[1.0; 4], &a).unwrap(), 0.0);
        assert!(head.forward(&[1.0; 3], &a).is_err());
    }
}
