use std::path::Path;

use doorns::doorworld::{generate_interaction_dataset, generate_pretrain_dataset};

use crate::config::{DatasetKind, GenerateConfig};

pub fn run(cfg: &GenerateConfig, out: &Path) -> anyhow::Result<()> {
    match cfg.kind {
        DatasetKind::Pretrain => {
            let ds = generate_pretrain_dataset(
                cfg.n_doors,
                cfg.samples_per_door,
                cfg.seed,
                cfg.image_size,
            )?;
            ds.write(out)?;
            let flipped = ds.sets.iter().filter(|s| s.door.flipped).count();
            println!(
                "pretrain dataset: {} doors, {} images ({}x{}), {} flipped, seed {} -> {}",
                ds.sets.len(),
                ds.n_images(),
                cfg.image_size,
                cfg.image_size,
                flipped,
                cfg.seed,
                out.display()
            );
        }
        DatasetKind::Interaction => {
            // Both are present after validation.
            let (n_actions, imagery) = (cfg.n_actions.unwrap(), cfg.imagery.unwrap());
            let ds = generate_interaction_dataset(
                cfg.n_doors,
                n_actions,
                cfg.samples_per_door,
                cfg.seed,
                imagery,
                cfg.image_size,
            )?;
            ds.write(out)?;
            let rewards: Vec<f64> = ds.records.iter().map(|r| r.reward).collect();
            let positive = rewards.iter().filter(|&&r| r > 0.0).count();
            println!(
                "interaction dataset ({imagery:?}): {} doors x {} actions = {} records, \
                 {positive} with positive reward, mean reward {:.4} m, seed {} -> {}",
                ds.sets.len(),
                n_actions,
                ds.records.len(),
                doorns::stats::mean(&rewards),
                cfg.seed,
                out.display()
            );
        }
    }
    Ok(())
}
