use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use doorns::doorworld::PretrainDataset;
use doorns::imageio::{contact_sheet, write_png, Image};
use doorns::latent_eval::probe::{door_mask, estimate_angle, has_door_region, hinge_position, iou};
use doorns::latent_eval::{
    default_z_values, fit_moments, reconstruct, sample_conditional, sample_random, z_sweep,
    Pretrained,
};
use doorns::seed::SeedStream;
use doorns::stats;

use crate::config::EvalLatentConfig;

/// Tiles per contact-sheet row for unstructured grids.
const SHEET_COLUMNS: usize = 8;

fn csv_file(path: &Path, header: &str) -> anyhow::Result<BufWriter<File>> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{header}")?;
    Ok(w)
}

fn sheet(path: &Path, rows: &[Vec<Image>]) -> anyhow::Result<()> {
    write_png(path, &contact_sheet(rows)?)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    model: String,
    n_doors: usize,
    mean_abs_error: f64,
    mean_door_iou: f64,
    /// IoU on each set's image closest to 90°.
    mean_door_iou_near_90: f64,
    random_with_door_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_hinge_spread_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_sweep_angle_spearman_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_sweep_endpoint_changed_fraction: Option<f64>,
}

fn changed_fraction(a: &Image, b: &Image) -> f64 {
    let n = a.height * a.width;
    let changed = (0..a.height)
        .flat_map(|r| (0..a.width).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let (x, y) = (a.rgb(r, c), b.rgb(r, c));
            (0..3).any(|k| (x[k] - y[k]).abs() > 1.0 / 255.0)
        })
        .count();
    changed as f64 / n as f64
}

fn spread(positions: &[Option<f64>]) -> Option<f64> {
    let found: Vec<f64> = positions.iter().flatten().copied().collect();
    (found.len() >= 2).then(|| stats::std_dev(&found))
}

pub fn run(cfg: &EvalLatentConfig, out: &Path) -> anyhow::Result<()> {
    let (model, _) = Pretrained::load(&cfg.checkpoint)?;
    let conditional = match (cfg.conditional, &model) {
        (Some(true), Pretrained::Vae(_)) => {
            return Err(doorns::Error::Unsupported(
                "conditional sampling and z-sweeps need a context variable; the VAE has none"
                    .into(),
            )
            .into())
        }
        (Some(c), _) => c,
        (None, Pretrained::Ns(_)) => true,
        (None, Pretrained::Vae(_)) => false,
    };
    let data = PretrainDataset::read(&cfg.dataset)?;
    if data.image_size != model.arch().image_size {
        bail!(
            "dataset has {}px images, checkpoint expects {}px",
            data.image_size,
            model.arch().image_size
        );
    }
    let moments_data = match &cfg.moments_dataset {
        Some(p) => PretrainDataset::read(p)?,
        None => data.clone(),
    };
    let doors = &data.sets[..cfg.n_doors.min(data.sets.len())];
    let seeds = SeedStream::new(cfg.seed);
    let mut summary = Summary {
        model: model.kind().into(),
        n_doors: doors.len(),
        ..Default::default()
    };

    // Reconstructions: originals / reconstructions / diffs per door.
    let mut rows = Vec::new();
    let mut probe = csv_file(
        &out.join("recon_probe.csv"),
        "door,image,angle_deg,mean_abs_error,door_iou",
    )?;
    let (mut maes, mut ious, mut ious90) = (Vec::new(), Vec::new(), Vec::new());
    for (d, set) in doors.iter().enumerate() {
        let rep = reconstruct(&model, set)?;
        let mut best90 = (f64::INFINITY, 0.0);
        for (i, ((orig, rec), diff)) in rep
            .originals
            .iter()
            .zip(&rep.reconstructions)
            .zip(&rep.diffs)
            .enumerate()
        {
            let mae = diff.mean();
            let v = iou(&door_mask(orig), &door_mask(rec));
            writeln!(probe, "{d},{i},{},{mae},{v}", set.angles[i])?;
            maes.push(mae);
            ious.push(v);
            let off = (set.angles[i] - 90.0).abs();
            if off < best90.0 {
                best90 = (off, v);
            }
        }
        ious90.push(best90.1);
        rows.push(rep.originals);
        rows.push(rep.reconstructions);
        rows.push(rep.diffs);
    }
    probe.flush()?;
    sheet(&out.join("recon.png"), &rows)?;
    summary.mean_abs_error = stats::mean(&maes);
    summary.mean_door_iou = stats::mean(&ious);
    summary.mean_door_iou_near_90 = stats::mean(&ious90);

    // Random samples from the moment-matched latent Gaussian.
    let moments = fit_moments(&model, &moments_data.sets)?;
    let random = sample_random(&model, &moments, cfg.n_random, &mut seeds.rng("random", 0))?;
    let mut probe = csv_file(&out.join("random_probe.csv"), "sample,has_door_region")?;
    for (k, img) in random.iter().enumerate() {
        writeln!(probe, "{k},{}", has_door_region(img))?;
    }
    probe.flush()?;
    if !random.is_empty() {
        summary.random_with_door_fraction =
            random.iter().filter(|i| has_door_region(i)).count() as f64 / random.len() as f64;
        sheet(
            &out.join("random.png"),
            &random
                .chunks(SHEET_COLUMNS)
                .map(<[Image]>::to_vec)
                .collect::<Vec<_>>(),
        )?;
    }

    if conditional {
        // Fixed-context samples, compared with as many random-context ones.
        let mut rows = Vec::new();
        let mut probe = csv_file(
            &out.join("conditional_probe.csv"),
            "door,hinge_sd_conditional,hinge_sd_random,ratio",
        )?;
        let mut ratios = Vec::new();
        for (d, set) in doors.iter().enumerate() {
            let cond = sample_conditional(
                &model,
                set,
                cfg.n_conditional,
                &mut seeds.rng("conditional", d as u64),
            )?;
            let rand = sample_random(
                &model,
                &moments,
                cfg.n_conditional,
                &mut seeds.rng("reference", d as u64),
            )?;
            let hint = set.door.flipped;
            let sc = spread(
                &cond
                    .iter()
                    .map(|i| hinge_position(i, hint))
                    .collect::<Vec<_>>(),
            );
            let sr = spread(
                &rand
                    .iter()
                    .map(|i| hinge_position(i, hint))
                    .collect::<Vec<_>>(),
            );
            let ratio = match (sc, sr) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            ratios.extend(ratio);
            writeln!(
                probe,
                "{d},{},{},{}",
                fmt_opt(sc),
                fmt_opt(sr),
                fmt_opt(ratio)
            )?;
            rows.push(cond);
        }
        probe.flush()?;
        sheet(&out.join("conditional.png"), &rows)?;
        if !ratios.is_empty() {
            summary.median_hinge_spread_ratio = Some(stats::median(&ratios));
        }

        let z_values = cfg.z_values.clone().unwrap_or_else(default_z_values);
        let mut rows = Vec::new();
        let mut probe = csv_file(&out.join("sweep_probe.csv"), "door,z,angle_estimate_deg")?;
        let (mut rhos, mut changed) = (Vec::new(), Vec::new());
        for (d, set) in doors.iter().enumerate() {
            let imgs = z_sweep(&model, set, &z_values)?;
            let mut zs = Vec::new();
            let mut angles = Vec::new();
            for (z, img) in z_values.iter().zip(&imgs) {
                let a = estimate_angle(img, set.door.flipped);
                writeln!(probe, "{d},{z},{}", fmt_opt(a))?;
                if let Some(a) = a {
                    zs.push(*z);
                    angles.push(a);
                }
            }
            if zs.len() >= 3 {
                rhos.push(stats::spearman(&zs, &angles).abs());
            }
            changed.push(changed_fraction(&imgs[0], &imgs[imgs.len() - 1]));
            rows.push(imgs);
        }
        probe.flush()?;
        sheet(&out.join("sweep.png"), &rows)?;
        if !rhos.is_empty() {
            summary.median_sweep_angle_spearman_abs = Some(stats::median(&rhos));
        }
        summary.mean_sweep_endpoint_changed_fraction = Some(stats::mean(&changed));
    }

    let text = serde_json::to_string_pretty(&summary)? + "\n";
    std::fs::write(out.join("summary.json"), &text)?;
    print!("{text}");
    Ok(())
}
