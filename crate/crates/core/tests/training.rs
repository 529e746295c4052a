//! Training-loop contracts on the tiny architecture.

use std::fs;

use doorns::doorworld::{generate_pretrain_dataset, DoorSet};
use doorns::nets::{Arch, Module, NsModel, VaeModel};
use doorns::pretrain::train::{split_doors, train, EpochRecord, TrainConfig, TrainOutput};
use doorns::seed::SeedStream;
use doorns::Error;

fn data(n: usize, seed: u64) -> Vec<DoorSet> {
    generate_pretrain_dataset(n, 5, seed, 8).unwrap().sets
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_doors: 4,
        batch_images: 16,
        learning_rate: 1e-2,
        seed: 5,
        validation_fraction: 0.2,
        early_stop_patience: 100,
        ..TrainConfig::default()
    }
}

fn ns() -> NsModel<f32> {
    NsModel::new(&Arch::tiny(), &mut SeedStream::new(1).rng("init", 0)).unwrap()
}

fn window_mean(r: &[EpochRecord]) -> f64 {
    r.iter().map(|e| e.train_elbo).sum::<f64>() / r.len() as f64
}

#[test]
fn training_bound_improves_and_kl_stays_nonnegative() {
    let sets = data(20, 2);
    let mut m = ns();
    let res = train(&mut m, &sets, &cfg(12), None, |_| {}).unwrap();
    let r = &res.history.records;
    assert_eq!(r.len(), 12);
    assert!(window_mean(&r[9..]) >= window_mean(&r[..3]), "{r:?}");
    for e in r {
        assert!(e.kl_c >= 0.0 && e.kl_z >= 0.0, "{e:?}");
        assert!(
            (e.train_elbo - (e.recon - e.kl_c - e.kl_z)).abs() <= 1e-6 * e.recon.abs().max(1.0)
        );
    }
    let best = r
        .iter()
        .find(|e| e.epoch == res.history.best_epoch)
        .unwrap();
    assert_eq!(best.val_elbo, res.history.best_val_elbo);
    assert!(r.iter().all(|e| e.val_elbo <= res.history.best_val_elbo));

    let mut v =
        VaeModel::<f32>::new(&Arch::tiny(), &mut SeedStream::new(3).rng("init", 0)).unwrap();
    let res = train(&mut v, &sets, &cfg(12), None, |_| {}).unwrap();
    let r = &res.history.records;
    assert!(window_mean(&r[9..]) >= window_mean(&r[..3]), "{r:?}");
    assert!(r.iter().all(|e| e.kl_c == 0.0 && e.kl_z >= 0.0));
}

#[test]
fn same_seed_same_history() {
    let sets = data(12, 4);
    let (mut a, mut b) = (ns(), ns());
    let ha = train(&mut a, &sets, &cfg(3), None, |_| {}).unwrap().history;
    let hb = train(&mut b, &sets, &cfg(3), None, |_| {}).unwrap().history;
    assert_eq!(ha, hb);
    assert_eq!(a, b);

    let mut c = ns();
    let other = TrainConfig { seed: 6, ..cfg(3) };
    let hc = train(&mut c, &sets, &other, None, |_| {}).unwrap().history;
    assert_ne!(ha.records, hc.records);
}

#[test]
fn validation_split_is_a_disjoint_partition() {
    let (train_ids, val_ids) = split_doors(10, 0.5, 9);
    assert_eq!((train_ids.len(), val_ids.len()), (5, 5));
    let mut all: Vec<usize> = train_ids.iter().chain(&val_ids).copied().collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(split_doors(10, 0.5, 9), (train_ids, val_ids));
    let (_, v) = split_doors(200, 0.1, 1);
    assert_eq!(v.len(), 20);
}

#[test]
fn resumed_run_equals_a_straight_run() {
    let sets = data(12, 7);
    let straight_dir = tempfile::tempdir().unwrap();
    let snapshot = tempfile::tempdir().unwrap();
    let out = TrainOutput::new(straight_dir.path());
    let mut straight = ns();
    let full = train(&mut straight, &sets, &cfg(5), Some(&out), |e| {
        // Runs after the epoch's state is on disk: freeze a copy at epoch 2.
        if e.epoch == 2 {
            for f in ["last_state.bin", "best.ckpt", "history.csv"] {
                fs::copy(straight_dir.path().join(f), snapshot.path().join(f)).unwrap();
            }
        }
    })
    .unwrap();

    let mut resumed =
        NsModel::<f32>::new(&Arch::tiny(), &mut SeedStream::new(99).rng("init", 0)).unwrap();
    let mut seen = Vec::new();
    let rest = train(
        &mut resumed,
        &sets,
        &cfg(5),
        Some(&TrainOutput::new(snapshot.path())),
        |e| seen.push(e.epoch),
    )
    .unwrap();
    assert_eq!(seen, vec![3, 4, 5]);
    assert_eq!(rest.history, full.history);
    assert_eq!(resumed, straight);
    assert_eq!(rest.best, full.best);
    assert_eq!(
        fs::read(snapshot.path().join("history.csv")).unwrap(),
        fs::read(straight_dir.path().join("history.csv")).unwrap()
    );

    // A different config must not silently continue someone else's run.
    let mut m = ns();
    let changed = TrainConfig {
        learning_rate: 2e-2,
        ..cfg(5)
    };
    assert!(train(
        &mut m,
        &sets,
        &changed,
        Some(&TrainOutput::new(snapshot.path())),
        |_| {}
    )
    .is_err());
}

#[test]
fn non_finite_weights_are_reported_by_term() {
    let sets = data(8, 8);
    let mut m = ns();
    m.decoder.params_mut()[0].1.value[0] = f32::NAN;
    match train(&mut m, &sets, &cfg(2), None, |_| {}) {
        Err(Error::NonFinite { term, epoch, step }) => {
            assert_eq!((epoch, step), (0, 0));
            assert!(term.contains("recon"), "{term}");
        }
        other => panic!(
            "expected a non-finite error, got {:?}",
            other.map(|r| r.history)
        ),
    }
}

#[test]
fn config_validation() {
    let sets = data(4, 1);
    for bad in [
        TrainConfig {
            epochs: 0,
            ..cfg(1)
        },
        TrainConfig {
            learning_rate: -1.0,
            ..cfg(1)
        },
        TrainConfig {
            validation_fraction: 0.0,
            ..cfg(1)
        },
        TrainConfig {
            max_grad_norm: Some(f64::NAN),
            ..cfg(1)
        },
    ] {
        assert!(matches!(
            train(&mut ns(), &sets, &bad, None, |_| {}),
            Err(Error::InvalidArgument(_))
        ));
    }
    assert!(train(&mut ns(), &sets[..1], &cfg(1), None, |_| {}).is_err());
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
    assert_eq!(
        parsed,
        TrainConfig {
            epochs: 7,
            ..TrainConfig::default()
        }
    );
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 7}"#).is_err());
}
