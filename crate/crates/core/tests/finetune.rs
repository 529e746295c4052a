//! Parameter-prediction scoring and the finetuning loop.

use doorns::doorworld::{generate_pretrain_dataset, mirror_door, DoorSet};
use doorns::finetune::{
    circular_abs_diff_deg, eval_params, finetune_params, param_metrics, predict_params, truths,
    Backbone, FinetuneConfig, ParamHead, ParamPrediction,
};
use doorns::nets::{Arch, Module};
use doorns::seed::SeedStream;
use proptest::prelude::*;
use rand::Rng;

fn sets(n: usize, seed: u64) -> Vec<DoorSet> {
    generate_pretrain_dataset(n, 5, seed, 8).unwrap().sets
}

fn exact(sets: &[DoorSet]) -> Vec<ParamPrediction> {
    truths(sets)
        .iter()
        .map(|(d, a)| ParamPrediction::exact(d, *a))
        .collect()
}

fn cnn(seed: u64) -> Backbone {
    Backbone::fresh_cnn(
        &Arch::tiny(),
        true,
        &mut SeedStream::new(seed).rng("cnn", 0),
    )
    .unwrap()
}

fn cfg(epochs: usize) -> FinetuneConfig {
    FinetuneConfig {
        epochs,
        batch_doors: 4,
        encoder_lr: 1e-3,
        head_lr: 1e-2,
        seed: 3,
    }
}

#[test]
fn perfect_predictor_scores_perfectly() {
    let test = sets(50, 1);
    let m = param_metrics(&exact(&test), &truths(&test)).unwrap();
    assert_eq!(m.flipped_accuracy, 1.0);
    assert_eq!(
        (m.origin_rmse, m.size_rmse, m.handle_offset_rmse),
        (0.0, 0.0, 0.0)
    );
    assert!(m.angle_error_deg < 1e-9, "{}", m.angle_error_deg);
}

#[test]
fn constant_logit_scores_the_class_frequency() {
    let test = sets(200, 2);
    let truth = truths(&test);
    let frac_flipped = truth.iter().filter(|(d, _)| d.flipped).count() as f64 / truth.len() as f64;
    for (logit, expected) in [(2.5, frac_flipped), (-2.5, 1.0 - frac_flipped)] {
        let preds: Vec<_> = exact(&test)
            .into_iter()
            .map(|p| ParamPrediction {
                flipped_logit: logit,
                ..p
            })
            .collect();
        let m = param_metrics(&preds, &truth).unwrap();
        assert!((m.flipped_accuracy - expected).abs() < 1e-12);
    }
}

#[test]
fn coin_flip_logits_score_one_half() {
    let test = sets(1000, 3);
    let mut rng = SeedStream::new(4).rng("coin", 0);
    let preds: Vec<_> = exact(&test)
        .into_iter()
        .map(|p| ParamPrediction {
            flipped_logit: if rng.random::<bool>() { 1.0 } else { -1.0 },
            ..p
        })
        .collect();
    let acc = param_metrics(&preds, &truths(&test))
        .unwrap()
        .flipped_accuracy;
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn mirrored_labels_swap_handedness_only() {
    let test = sets(40, 5);
    let mirrored: Vec<(_, f64)> = truths(&test)
        .iter()
        .map(|(d, a)| (mirror_door(d), *a))
        .collect();
    let m = param_metrics(&exact(&test), &mirrored).unwrap();
    assert_eq!(m.flipped_accuracy, 0.0);
    assert_eq!((m.size_rmse, m.handle_offset_rmse), (0.0, 0.0));
    assert!(m.angle_error_deg < 1e-9);
    let back: Vec<_> = mirrored
        .iter()
        .map(|(d, a)| ParamPrediction::exact(d, *a))
        .collect();
    assert_eq!(
        param_metrics(&back, &mirrored).unwrap().flipped_accuracy,
        1.0
    );
}

proptest! {
    #[test]
    fn angle_readout_ignores_the_output_scale(a in 0.0f64..180.0, k in 1e-3f64..1e3, truth in 0.0f64..180.0) {
        let door = sets(1, 6)[0].door;
        let p = ParamPrediction::exact(&door, a);
        let scaled = ParamPrediction { angle_sin: k * p.angle_sin, angle_cos: k * p.angle_cos, ..p };
        prop_assert!((scaled.angle_deg() - p.angle_deg()).abs() < 1e-9);
        let m1 = param_metrics(&[p], &[(door, truth)]).unwrap();
        let m2 = param_metrics(&[scaled], &[(door, truth)]).unwrap();
        prop_assert!((m1.angle_error_deg - m2.angle_error_deg).abs() < 1e-9);
        prop_assert!((m1.angle_error_deg - (a - truth).abs()).abs() < 1e-9);
    }

    #[test]
    fn circular_difference_is_a_bounded_symmetric_metric(a in -720.0f64..720.0, b in -720.0f64..720.0) {
        let d = circular_abs_diff_deg(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!((d - circular_abs_diff_deg(b, a)).abs() < 1e-9);
        prop_assert!(circular_abs_diff_deg(a, a + 360.0) < 1e-9);
    }
}

#[test]
fn head_is_pure_and_finite() {
    let head = ParamHead::new(12, &mut SeedStream::new(7).rng("head", 0));
    let mut rng = SeedStream::new(8).rng("emb", 0);
    for _ in 0..200 {
        let emb: Vec<f32> = (0..12).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = head.forward(&emb).unwrap();
        assert!(p.is_finite());
        assert_eq!(head.forward(&emb).unwrap(), p);
    }
    assert!(head.forward(&[0.0; 11]).is_err());
    assert!(head.forward(&[]).is_err());
}

#[test]
fn finetuning_lowers_the_loss_and_is_deterministic() {
    let train = sets(24, 9);
    let test = sets(8, 10);
    let a = finetune_params(cnn(1), &train, &cfg(5)).unwrap();
    assert_eq!(a.losses.len(), 5);
    assert!(a.losses[4] < a.losses[0], "{:?}", a.losses);
    assert!(a.losses.iter().all(|l| l.is_finite()));

    let b = finetune_params(cnn(1), &train, &cfg(5)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.head, b.head);
    let ma = eval_params(&a.backbone, &a.head, &test).unwrap();
    assert_eq!(ma, eval_params(&b.backbone, &b.head, &test).unwrap());
    assert_eq!(
        predict_params(&a.backbone, &a.head, &test).unwrap().len(),
        40
    );

    // A frozen encoder leaves the backbone untouched.
    let frozen = finetune_params(
        cnn(1),
        &train,
        &FinetuneConfig {
            encoder_lr: 0.0,
            ..cfg(2)
        },
    )
    .unwrap();
    match (&frozen.backbone, &cnn(1)) {
        (Backbone::Cnn { encoder: e1, .. }, Backbone::Cnn { encoder: e2, .. }) => {
            // Gradients are still accumulated; only the values must stay put.
            let values = |e: &doorns::nets::Encoder<f32>| -> Vec<Vec<f32>> {
                e.params()
                    .into_iter()
                    .map(|(_, p)| p.value.clone())
                    .collect()
            };
            assert_eq!(values(e1), values(e2));
        }
        _ => unreachable!(),
    }
}

#[test]
fn empty_inputs_are_errors() {
    assert!(finetune_params(cnn(2), &[], &cfg(1)).is_err());
    let r = finetune_params(cnn(2), &sets(4, 11), &cfg(1)).unwrap();
    assert!(eval_params(&r.backbone, &r.head, &[]).is_err());
    assert!(param_metrics(&[], &[]).is_err());
    assert!(finetune_params(
        cnn(2),
        &sets(4, 11),
        &FinetuneConfig {
            epochs: 0,
            ..cfg(1)
        }
    )
    .is_err());
}
