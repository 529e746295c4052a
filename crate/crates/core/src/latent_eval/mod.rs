//! Probes of pretrained latent spaces: reconstructions with pixel diffs,
//! moment-matched random samples, fixed-context samples and z-sweeps.

pub mod probe;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::doorworld::DoorSet;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nets::checkpoint::{load_checkpoint, read_tensor_file, CheckpointMeta};
use crate::nets::{images_to_fmap, Arch, Mat, NsModel, SetIndex, VaeModel};

/// A pretrained latent-variable model of either kind.
#[derive(Debug, Clone)]
pub enum Pretrained {
    Ns(NsModel<f32>),
    Vae(VaeModel<f32>),
}

impl Pretrained {
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let kind = read_tensor_file::<f32>(path)?
            .meta
            .get("kind")
            .and_then(|k| k.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::format(path, "checkpoint metadata lacks a kind"))?;
        match kind.as_str() {
            "ns" => load_checkpoint(path).map(|(m, meta)| (Pretrained::Ns(m), meta)),
            "vae" => load_checkpoint(path).map(|(m, meta)| (Pretrained::Vae(m), meta)),
            other => Err(Error::format(path, format!("unknown model kind {other:?}"))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Pretrained::Ns(_) => "ns",
            Pretrained::Vae(_) => "vae",
        }
    }

    pub fn arch(&self) -> &Arch {
        match self {
            Pretrained::Ns(m) => &m.arch,
            Pretrained::Vae(m) => &m.arch,
        }
    }

    fn ns(&self, op: &str) -> Result<&NsModel<f32>> {
        match self {
            Pretrained::Ns(m) => Ok(m),
            Pretrained::Vae(_) => Err(Error::Unsupported(format!(
                "{op} needs a context variable; the VAE has none"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub originals: Vec<Image>,
    pub reconstructions: Vec<Image>,
    pub diffs: Vec<Image>,
    pub mean_abs_error: f64,
}

impl ReconReport {
    pub fn new(originals: Vec<Image>, reconstructions: Vec<Image>) -> Result<Self> {
        if originals.len() != reconstructions.len() {
            return Err(Error::invalid(
                "originals and reconstructions differ in count",
            ));
        }
        let diffs = originals
            .iter()
            .zip(&reconstructions)
            .map(|(a, b)| a.abs_diff(b))
            .collect::<Result<Vec<_>>>()?;
        let mean_abs_error = mean_of_images(&diffs);
        Ok(Self {
            originals,
            reconstructions,
            diffs,
            mean_abs_error,
        })
    }
}

/// Mean over every value of every image, accumulated in image order.
pub fn mean_of_images(images: &[Image]) -> f64 {
    let n: usize = images.iter().map(|i| i.data.len()).sum();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = images
        .iter()
        .flat_map(|i| i.data.iter())
        .map(|&v| v as f64)
        .sum();
    total / n as f64
}

/// Decodes a set at its posterior means (no sampling).
pub fn reconstruct(model: &Pretrained, door_set: &DoorSet) -> Result<ReconReport> {
    if door_set.images.is_empty() {
        return Err(Error::invalid("door set has no images"));
    }
    let recon = match model {
        Pretrained::Ns(m) => {
            let x = images_to_fmap(&door_set.images, m.arch.image_size)?;
            let sets = SetIndex::uniform(1, door_set.images.len());
            let pm = m.posterior_means(&x, &sets);
            let c = pm.c_mean.select_rows(&sets.set_of);
            m.decode_rows(&Mat::hcat(&pm.z_mean, &c))
        }
        Pretrained::Vae(m) => {
            let x = images_to_fmap(&door_set.images, m.arch.image_size)?;
            let (mean, _) = m.embed_cached(&x);
            m.decode_rows(&mean)
        }
    };
    ReconReport::new(door_set.images.clone(), recon)
}

/// Per-dimension mean and standard deviation of dataset encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Moments of the posterior-mean encodings of `sets`: the context for the
/// statistician (one per set), the latent for the VAE (one per image).
pub fn fit_moments(model: &Pretrained, sets: &[DoorSet]) -> Result<LatentMoments> {
    if sets.is_empty() {
        return Err(Error::invalid("no sets to fit latent moments on"));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for chunk in sets.chunks(16) {
        let images: Vec<Image> = chunk
            .iter()
            .flat_map(|s| s.images.iter().cloned())
            .collect();
        let x = images_to_fmap(&images, model.arch().image_size)?;
        let m = match model {
            Pretrained::Ns(m) => {
                let sizes: Vec<usize> = chunk.iter().map(|s| s.images.len()).collect();
                m.posterior_means(&x, &SetIndex::from_sizes(&sizes)).c_mean
            }
            Pretrained::Vae(m) => m.embed_cached(&x).0,
        };
        for r in 0..m.rows {
            rows.push(m.row(r).iter().map(|&v| v as f64).collect());
        }
    }
    let d = rows[0].len();
    let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    Ok(LatentMoments {
        mean: (0..d).map(|j| crate::stats::mean(&col(j))).collect(),
        std: (0..d).map(|j| crate::stats::std_dev(&col(j))).collect(),
    })
}

fn gaussian_rows<R: Rng + ?Sized>(m: &LatentMoments, n: usize, rng: &mut R) -> Mat<f32> {
    let d = m.mean.len();
    let mut out = Mat::zeros(n, d);
    for r in 0..n {
        for j in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            out.row_mut(r)[j] = (m.mean[j] + m.std[j] * e) as f32;
        }
    }
    out
}

/// Draws `z ~ p(z | c)` for each context row.
fn sample_prior_z<R: Rng + ?Sized>(model: &NsModel<f32>, c: &Mat<f32>, rng: &mut R) -> Mat<f32> {
    let raw = model.latent_decoder.forward(c);
    let (mean, log_var) = crate::nets::gaussian::split_head(&raw);
    let eps = crate::nets::gaussian::normal_noise(c.rows, model.arch.dim_z, rng);
    crate::nets::gaussian::reparam_rows(&mean, &log_var, &eps)
}

/// Decodes `n` latents drawn from the moment-matched Gaussian (the context
/// for the statistician, followed by `z ~ p(z | c)`).
pub fn sample_random<R: Rng + ?Sized>(
    model: &Pretrained,
    moments: &LatentMoments,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Image>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    match model {
        Pretrained::Ns(m) => {
            if moments.mean.len() != m.arch.dim_c {
                return Err(Error::invalid("moments do not match the context size"));
            }
            let c = gaussian_rows(moments, n, rng);
            let z = sample_prior_z(m, &c, rng);
            Ok(m.decode_rows(&Mat::hcat(&z, &c)))
        }
        Pretrained::Vae(m) => {
            if moments.mean.len() != m.dim_latent() {
                return Err(Error::invalid("moments do not match the latent size"));
            }
            Ok(m.decode_rows(&gaussian_rows(moments, n, rng)))
        }
    }
}

/// Posterior-mean context of one set.
pub fn context_mean(model: &NsModel<f32>, door_set: &DoorSet) -> Result<Vec<f32>> {
    if door_set.images.is_empty() {
        return Err(Error::invalid("door set has no images"));
    }
    let h = model.encoder_forward(&door_set.images)?;
    Ok(model.statistic_forward(&h)?.mean)
}

/// Decodes the given instance latents at the set's posterior-mean context.
pub fn decode_conditional(
    model: &Pretrained,
    door_set: &DoorSet,
    zs: &[Vec<f32>],
) -> Result<Vec<Image>> {
    let m = model.ns("conditional decoding")?;
    let c = context_mean(m, door_set)?;
    let mut rows = Vec::with_capacity(zs.len());
    for z in zs {
        if z.len() != m.arch.dim_z {
            return Err(Error::invalid(format!(
                "instance latent has length {}, expected {}",
                z.len(),
                m.arch.dim_z
            )));
        }
        rows.push([z.as_slice(), &c].concat());
    }
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    Ok(m.decode_rows(&Mat::from_rows(&rows)))
}

/// `n` images of "the same door": fixed posterior-mean context, fresh
/// `z ~ p(z | c)` per image.
pub fn sample_conditional<R: Rng + ?Sized>(
    model: &Pretrained,
    door_set: &DoorSet,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Image>> {
    let m = model.ns("conditional sampling")?;
    let c = context_mean(m, door_set)?;
    let cs = Mat::from_rows(&vec![c; n]);
    if n == 0 {
        return Ok(Vec::new());
    }
    let z = sample_prior_z(m, &cs, rng);
    Ok(m.decode_rows(&Mat::hcat(&z, &cs)))
}

/// Decodes at `z = E[z | c]`; deterministic.
pub fn conditional_at_prior_mean(model: &Pretrained, door_set: &DoorSet) -> Result<Image> {
    let m = model.ns("conditional sampling")?;
    let c = context_mean(m, door_set)?;
    let z = m.latent_decoder_forward(&c)?.mean;
    Ok(decode_conditional(model, door_set, &[z])?.remove(0))
}

/// Default sweep: −10 to 9.6 in steps of 0.4.
pub fn default_z_values() -> Vec<f64> {
    (0..50).map(|k| -10.0 + 0.4 * k as f64).collect()
}

/// One image per z value at the set's posterior-mean context; only the first
/// instance coordinate is swept, any others stay at the prior mean.
pub fn z_sweep(model: &Pretrained, door_set: &DoorSet, z_values: &[f64]) -> Result<Vec<Image>> {
    let m = model.ns("a z-sweep")?;
    if z_values.is_empty() {
        return Err(Error::invalid("z-sweep needs at least one value"));
    }
    let c = context_mean(m, door_set)?;
    let base = m.latent_decoder_forward(&c)?.mean;
    let zs: Vec<Vec<f32>> = z_values
        .iter()
        .map(|&v| {
            let mut z = base.clone();
            z[0] = v as f32;
            z
        })
        .collect();
    decode_conditional(model, door_set, &zs)
}
