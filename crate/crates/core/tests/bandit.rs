//! Regret scoring and the reward-regression loop.

use doorns::bandit::{
    eval_regret, finetune_reward, predict_rewards, rank_actions, realized_rewards, regret_report,
    RewardConfig,
};
use doorns::doorworld::{generate_interaction_dataset, Imagery, InteractionDataset};
use doorns::finetune::Backbone;
use doorns::nets::Arch;
use doorns::seed::SeedStream;
use proptest::prelude::*;

fn data(n_doors: usize, n_actions: usize, seed: u64) -> InteractionDataset {
    generate_interaction_dataset(n_doors, n_actions, 3, seed, Imagery::Open, 8).unwrap()
}

fn cnn(seed: u64) -> Backbone {
    Backbone::fresh_cnn(
        &Arch::tiny(),
        false,
        &mut SeedStream::new(seed).rng("cnn", 0),
    )
    .unwrap()
}

fn cfg(epochs: usize) -> RewardConfig {
    RewardConfig {
        epochs,
        batch_doors: 4,
        encoder_lr: 1e-3,
        head_lr: 1e-3,
        seed: 2,
    }
}

fn table() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, 0.0f64..1.0), 5..30)
}

proptest! {
    #[test]
    fn regret_ignores_monotone_rescaling(doors in prop::collection::vec(table(), 1..6)) {
        let n = doors.iter().map(Vec::len).min().unwrap();
        let p: Vec<Vec<f64>> = doors.iter().map(|d| d[..n].iter().map(|x| x.0).collect()).collect();
        let r: Vec<Vec<f64>> = doors.iter().map(|d| d[..n].iter().map(|x| x.1).collect()).collect();
        let q: Vec<Vec<f64>> = p.iter().map(|d| d.iter().map(|v| (2.0 * v).exp() - 4.0).collect()).collect();
        let a = regret_report(&p, &r).unwrap();
        let b = regret_report(&q, &r).unwrap();
        prop_assert_eq!(a.regret_top1, b.regret_top1);
        prop_assert_eq!(a.regret_top5, b.regret_top5);
        prop_assert_eq!(&a.recall_at_n, &b.recall_at_n);
        prop_assert!((0.0..=1.0).contains(&a.regret_top1));
        prop_assert!(a.regret_top1 <= 1.0 && a.regret_top5 <= 1.0);
        prop_assert!(a.recall_at_n.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*a.recall_at_n.last().unwrap(), 1.0);
    }

    #[test]
    fn ranking_is_a_descending_permutation(p in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let r = rank_actions(&p);
        let mut sorted = r.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..p.len()).collect::<Vec<_>>());
        prop_assert!(r.windows(2).all(|w| p[w[0]] >= p[w[1]]));
    }
}

#[test]
fn oracle_predictions_have_no_regret() {
    let d = data(10, 20, 1);
    let r = realized_rewards(&d);
    let rep = regret_report(&r, &r).unwrap();
    assert_eq!((rep.regret_top1, rep.reward_rmse), (0.0, 0.0));
    assert_eq!(rep.recall_at_n[0], 1.0);
    assert_eq!(rep.n_doors_evaluated + rep.n_doors_excluded, 10);
}

#[test]
fn excluded_doors_are_counted_and_skipped() {
    let good = vec![0.1, 0.4, 0.2, 0.3, 0.0];
    let zero = vec![0.0; 5];
    let tiny = vec![1e-7; 5];
    let anti: Vec<f64> = good.iter().map(|v| -v).collect();
    let rep = regret_report(
        &[good.clone(), anti.clone(), anti.clone(), anti],
        &[good.clone(), zero, tiny, good],
    )
    .unwrap();
    assert_eq!((rep.n_doors_evaluated, rep.n_doors_excluded), (2, 2));
    // Door 1 is ranked perfectly, door 4 worst-first.
    assert!((rep.regret_top1 - 0.5).abs() < 1e-12);
    assert_eq!(rep.recall_at_n[0], 0.5);
    assert!(regret_report(&[vec![0.0; 5]], &[vec![0.0; 5]]).is_err());
    assert!(regret_report(&[vec![f64::NAN; 5]], &[vec![1.0; 5]]).is_err());
}

#[test]
fn reward_regression_learns_and_is_deterministic() {
    let train = data(12, 20, 3);
    let a = finetune_reward(cnn(1), &train, &cfg(5)).unwrap();
    assert!(a.losses[4] < a.losses[0], "{:?}", a.losses);
    let b = finetune_reward(cnn(1), &train, &cfg(5)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.head, b.head);

    let test = data(5, 20, 4);
    let ra = eval_regret(&a.backbone, &a.head, &test).unwrap();
    assert_eq!(ra, eval_regret(&b.backbone, &b.head, &test).unwrap());
    assert_eq!(ra.recall_at_n.len(), 20);
    assert!(finetune_reward(
        cnn(1),
        &train,
        &RewardConfig {
            head_lr: 0.0,
            ..cfg(1)
        }
    )
    .is_err());
}

#[test]
fn predictions_cover_every_pair() {
    let d = generate_interaction_dataset(80, 100, 2, 5, Imagery::Closed, 8).unwrap();
    let r = finetune_reward(cnn(2), &data(4, 100, 6), &cfg(1)).unwrap();
    let p = predict_rewards(&r.backbone, &r.head, &d).unwrap();
    assert_eq!(p.len(), 80);
    assert!(p
        .iter()
        .all(|door| door.len() == 100 && door.iter().all(|v| v.is_finite())));
    assert_eq!(p.iter().map(Vec::len).sum::<usize>(), 8000);
}
