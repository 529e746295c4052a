use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};

use doorns::bandit::{eval_regret, finetune_reward, RegretReport, RewardConfig};
use doorns::doorworld::{InteractionDataset, PretrainDataset};
use doorns::finetune::{
    eval_params, finetune_params, Backbone, FinetuneConfig, ModelKind, ParamMetrics,
};
use doorns::latent_eval::Pretrained;
use doorns::seed::SeedStream;
use doorns::stats;

use crate::config::{FinetuneRunConfig, Task};

pub const PARAM_METRICS: [&str; 5] = [
    "flipped_accuracy",
    "origin_rmse",
    "size_rmse",
    "handle_offset_rmse",
    "angle_error_deg",
];

pub const REWARD_METRICS: [&str; 3] = ["reward_rmse", "regret_top1", "regret_top5"];

fn param_values(m: &ParamMetrics) -> [f64; 5] {
    [
        m.flipped_accuracy,
        m.origin_rmse,
        m.size_rmse,
        m.handle_offset_rmse,
        m.angle_error_deg,
    ]
}

fn reward_values(r: &RegretReport) -> [f64; 3] {
    [r.reward_rmse, r.regret_top1, r.regret_top5]
}

fn backbone(cfg: &FinetuneRunConfig, seed: u64) -> anyhow::Result<Backbone> {
    match (&cfg.checkpoint, cfg.model) {
        (Some(path), kind) => {
            let (model, _) = Pretrained::load(path)?;
            if model.kind() != kind.name() {
                bail!(
                    "{} holds a {} model but the config asks for {}",
                    path.display(),
                    model.kind(),
                    kind.name()
                );
            }
            Ok(Backbone::from_pretrained(model))
        }
        (None, _) => Ok(Backbone::fresh_cnn(
            &cfg.arch,
            cfg.grouped,
            &mut SeedStream::new(seed).rng("cnn-init", 0),
        )?),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn label(cfg: &FinetuneRunConfig) -> (String, String) {
    let model = match (cfg.model, cfg.grouped) {
        (ModelKind::Cnn, true) => "cnn-grouped".to_string(),
        (k, _) => k.name().to_string(),
    };
    (
        model,
        cfg.n_pretrain.map(|n| n.to_string()).unwrap_or_default(),
    )
}

/// `mean, std` per column over the seed rows.
fn aggregate(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    (0..rows[0].len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            (
                stats::mean(&col),
                if col.len() > 1 {
                    stats::std_dev(&col)
                } else {
                    0.0
                },
            )
        })
        .collect()
}

fn write_tables(
    out: &Path,
    cfg: &FinetuneRunConfig,
    names: &[&str],
    rows: &[Vec<f64>],
) -> anyhow::Result<Vec<(f64, f64)>> {
    let (model, n_pretrain) = label(cfg);
    let mut w = create(&out.join("metrics.csv"))?;
    writeln!(w, "model,n_pretrain,seed,{}", names.join(","))?;
    for (seed, row) in cfg.seeds.iter().zip(rows) {
        let vals: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{model},{n_pretrain},{seed},{}", vals.join(","))?;
    }
    w.flush()?;

    let agg = aggregate(rows);
    let mut w = create(&out.join("summary.csv"))?;
    let header: Vec<String> = names
        .iter()
        .flat_map(|n| [format!("{n}_mean"), format!("{n}_std")])
        .collect();
    writeln!(w, "model,n_pretrain,n_seeds,{}", header.join(","))?;
    let vals: Vec<String> = agg
        .iter()
        .flat_map(|(m, s)| [m.to_string(), s.to_string()])
        .collect();
    writeln!(w, "{model},{n_pretrain},{},{}", rows.len(), vals.join(","))?;
    w.flush()?;
    Ok(agg)
}

fn write_losses(out: &Path, seeds: &[u64], losses: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = create(&out.join("losses.csv"))?;
    writeln!(w, "seed,epoch,loss")?;
    for (seed, l) in seeds.iter().zip(losses) {
        for (e, v) in l.iter().enumerate() {
            writeln!(w, "{seed},{},{v}", e + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_size(b: &Backbone, size: usize, what: &Path) -> anyhow::Result<()> {
    if b.arch().image_size != size {
        bail!(
            "{} has {}px images but the model expects {}px",
            what.display(),
            size,
            b.arch().image_size
        );
    }
    Ok(())
}

fn run_params(cfg: &FinetuneRunConfig, out: &Path) -> anyhow::Result<()> {
    let train = PretrainDataset::read(&cfg.train_dataset)?;
    let test = PretrainDataset::read(&cfg.test_dataset)?;
    let (mut rows, mut losses) = (Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let b = backbone(cfg, seed)?;
        check_size(&b, train.image_size, &cfg.train_dataset)?;
        check_size(&b, test.image_size, &cfg.test_dataset)?;
        let ft = FinetuneConfig {
            seed,
            ..cfg.params.clone()
        };
        let res = finetune_params(b, &train.sets, &ft)?;
        let m = eval_params(&res.backbone, &res.head, &test.sets)?;
        println!(
            "seed {seed}: flipped acc {:.3}, origin {:.4}, size {:.4}, handle {:.4}, angle {:.2} deg",
            m.flipped_accuracy, m.origin_rmse, m.size_rmse, m.handle_offset_rmse, m.angle_error_deg
        );
        rows.push(param_values(&m).to_vec());
        losses.push(res.losses);
    }
    write_losses(out, &cfg.seeds, &losses)?;
    let agg = write_tables(out, cfg, &PARAM_METRICS, &rows)?;
    for (name, (m, s)) in PARAM_METRICS.iter().zip(agg) {
        println!("{name}: {m:.4} ± {s:.4}");
    }
    Ok(())
}

fn run_reward(cfg: &FinetuneRunConfig, out: &Path) -> anyhow::Result<()> {
    let train = InteractionDataset::read(&cfg.train_dataset)?;
    let test = InteractionDataset::read(&cfg.test_dataset)?;
    let (mut rows, mut losses, mut curves) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let b = backbone(cfg, seed)?;
        check_size(&b, train.image_size, &cfg.train_dataset)?;
        check_size(&b, test.image_size, &cfg.test_dataset)?;
        let rc = RewardConfig {
            seed,
            ..cfg.reward.clone()
        };
        let res = finetune_reward(b, &train, &rc)?;
        let r = eval_regret(&res.backbone, &res.head, &test)?;
        println!(
            "seed {seed}: reward rmse {:.4}, top-1 regret {:.3}, top-5 regret {:.3} ({} doors, {} excluded)",
            r.reward_rmse, r.regret_top1, r.regret_top5, r.n_doors_evaluated, r.n_doors_excluded
        );
        rows.push(reward_values(&r).to_vec());
        losses.push(res.losses);
        curves.push(r.recall_at_n);
    }
    write_losses(out, &cfg.seeds, &losses)?;
    let agg = write_tables(out, cfg, &REWARD_METRICS, &rows)?;
    for (name, (m, s)) in REWARD_METRICS.iter().zip(agg) {
        println!("{name}: {m:.4} ± {s:.4}");
    }
    let mut w = create(&out.join("recall_curve.csv"))?;
    writeln!(w, "n,recall,recall_std")?;
    for (n, (m, s)) in aggregate(&curves).into_iter().enumerate() {
        writeln!(w, "{},{m},{s}", n + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &FinetuneRunConfig, out: &Path) -> anyhow::Result<()> {
    match cfg.task {
        Task::Params => run_params(cfg, out),
        Task::Reward => run_reward(cfg, out),
    }
}
