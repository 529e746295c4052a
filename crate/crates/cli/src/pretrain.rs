use std::path::Path;

use anyhow::bail;

use doorns::doorworld::PretrainDataset;
use doorns::nets::{NsModel, VaeModel};
use doorns::pretrain::{train, EpochRecord, TrainOutput, TrainResult, Trainable};
use doorns::seed::SeedStream;

use crate::config::{LatentModel, PretrainConfig};

fn log(r: &EpochRecord) {
    println!(
        "epoch {:>4}  train {:>10.2}  val {:>10.2}  recon {:>10.2}  kl_z {:>8.3}  kl_c {:>8.3}",
        r.epoch, r.train_elbo, r.val_elbo, r.recon, r.kl_z, r.kl_c
    );
}

fn fit<M: Trainable<f32> + Clone>(
    mut model: M,
    data: &PretrainDataset,
    cfg: &PretrainConfig,
    out: &Path,
) -> anyhow::Result<TrainResult<M>> {
    let output = TrainOutput {
        dir: out.to_path_buf(),
    };
    Ok(train(
        &mut model,
        &data.sets,
        &cfg.train,
        Some(&output),
        log,
    )?)
}

pub fn run(cfg: &PretrainConfig, out: &Path) -> anyhow::Result<()> {
    let data = PretrainDataset::read(&cfg.dataset)?;
    if data.image_size != cfg.arch.image_size {
        bail!(
            "dataset {} has {}px images but the architecture expects {}px",
            cfg.dataset.display(),
            data.image_size,
            cfg.arch.image_size
        );
    }
    let mut rng = SeedStream::new(cfg.train.seed).rng("init", 0);
    let history = match cfg.model {
        LatentModel::Ns => fit(NsModel::<f32>::new(&cfg.arch, &mut rng)?, &data, cfg, out)?.history,
        LatentModel::Vae => {
            fit(VaeModel::<f32>::new(&cfg.arch, &mut rng)?, &data, cfg, out)?.history
        }
    };
    println!(
        "best validation ELBO {:.3} per image at epoch {}{}; checkpoint {}",
        history.best_val_elbo,
        history.best_epoch,
        if history.stopped_early {
            " (early stop)"
        } else {
            ""
        },
        out.join("best.ckpt").display()
    );
    Ok(())
}
