//! Single-sample reparameterised bounds for the statistician (per set) and
//! the VAE (per image), with hand-derived gradients.
//!
//! Noise is drawn up front so the estimate is a deterministic function of
//! the parameters; that is what makes finite-difference checks possible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doorworld::DoorSet;
use crate::error::Result;
use crate::imageio::Image;
use crate::nets::blocks::{DecoderCache, EncoderCache, SetIndex, StatisticCache};
use crate::nets::gaussian::{
    batch_kl, clamp_log_var_backward, normal_noise, reparam_rows, reparam_rows_backward, split_head,
};
use crate::nets::layers::MlpCache;
use crate::nets::{images_to_fmap, Fmap, Mat, NsModel, Scalar, VaeModel};

/// Standard deviation of the Gaussian pixel likelihood.
pub const PIXEL_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub elbo: f64,
}

impl ElboTerms {
    pub fn new(reconstruction: f64, kl_z: f64, kl_c: f64) -> Self {
        Self {
            reconstruction,
            kl_z,
            kl_c,
            elbo: reconstruction - kl_z - kl_c,
        }
    }

    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a ElboTerms>) -> Self {
        let (mut r, mut z, mut c) = (0.0, 0.0, 0.0);
        for t in terms {
            r += t.reconstruction;
            z += t.kl_z;
            c += t.kl_c;
        }
        Self::new(r, z, c)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.reconstruction * s, self.kl_z * s, self.kl_c * s)
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("reconstruction", self.reconstruction),
            ("kl_z", self.kl_z),
            ("kl_c", self.kl_c),
            ("elbo", self.elbo),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Per-image Gaussian log-likelihood of `x` under mean `mu`.
pub fn pixel_log_likelihood<T: Scalar>(x: &Fmap<T>, mu: &Fmap<T>) -> Vec<f64> {
    let hw = x.h * x.w;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * PIXEL_SIGMA * PIXEL_SIGMA).ln();
    let inv = 1.0 / (2.0 * PIXEL_SIGMA * PIXEL_SIGMA);
    let mut out = vec![norm * (x.c * hw) as f64; x.n];
    for c in 0..x.c {
        for (n, o) in out.iter_mut().enumerate() {
            let start = (c * x.n + n) * hw;
            let sq: f64 = x.data[start..start + hw]
                .iter()
                .zip(&mu.data[start..start + hw])
                .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
                .sum();
            *o -= sq * inv;
        }
    }
    out
}

/// Gradient of `-scale · Σ log-likelihood` with respect to the mean image.
fn pixel_loss_grad<T: Scalar>(x: &Fmap<T>, mu: &Fmap<T>, scale: f64) -> Fmap<T> {
    let k = T::lit(scale / (PIXEL_SIGMA * PIXEL_SIGMA));
    let mut g = mu.clone();
    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
        *gv = (*gv - xv) * k;
    }
    g
}

#[derive(Debug, Clone)]
pub struct NsNoise<T> {
    /// `[sets, dim_c]`
    pub eps_c: Mat<T>,
    /// `[images, dim_z]`
    pub eps_z: Mat<T>,
}

impl<T: Scalar> NsNoise<T> {
    pub fn sample<R: Rng + ?Sized>(model: &NsModel<T>, sets: &SetIndex, rng: &mut R) -> Self {
        Self {
            eps_c: normal_noise(sets.n_sets(), model.arch.dim_c, rng),
            eps_z: normal_noise(sets.n_items(), model.arch.dim_z, rng),
        }
    }
}

pub struct NsTape<T> {
    sets: SetIndex,
    enc: EncoderCache<T>,
    stat: StatisticCache<T>,
    stat_raw: Mat<T>,
    c_log_var: Mat<T>,
    inf: MlpCache<T>,
    inf_raw: Mat<T>,
    qz_mean: Mat<T>,
    qz_log_var: Mat<T>,
    prior: MlpCache<T>,
    prior_raw: Mat<T>,
    pz_mean: Mat<T>,
    pz_log_var: Mat<T>,
    c_mean: Mat<T>,
    dec: DecoderCache<T>,
    mu: Fmap<T>,
}

/// Bound for every set in the batch, plus the tape for [`ns_backward`].
pub fn ns_forward<T: Scalar>(
    model: &NsModel<T>,
    x: &Fmap<T>,
    sets: &SetIndex,
    noise: &NsNoise<T>,
) -> (Vec<ElboTerms>, NsTape<T>) {
    let (h, enc) = model.encoder.forward_cached(x);
    let (stat_raw, stat) = model.statistic.forward_cached(&h, sets);
    let (c_mean, c_log_var) = split_head(&stat_raw);
    let c = reparam_rows(&c_mean, &c_log_var, &noise.eps_c);
    let c_rep = c.select_rows(&sets.set_of);

    let (inf_raw, inf) = model.inference.forward_cached(&Mat::hcat(&h, &c_rep));
    let (qz_mean, qz_log_var) = split_head(&inf_raw);
    let (prior_raw, prior) = model.latent_decoder.forward_cached(&c);
    let (pz_set_mean, pz_set_log_var) = split_head(&prior_raw);
    let pz_mean = pz_set_mean.select_rows(&sets.set_of);
    let pz_log_var = pz_set_log_var.select_rows(&sets.set_of);

    let z = reparam_rows(&qz_mean, &qz_log_var, &noise.eps_z);
    let (mu, dec) = model.decoder.forward_cached(&Mat::hcat(&z, &c_rep));

    let recon = pixel_log_likelihood(x, &mu);
    let kl_z = batch_kl(&qz_mean, &qz_log_var, &pz_mean, &pz_log_var, 0.0).per_row;
    let zeros = Mat::zeros(c_mean.rows, c_mean.cols);
    let kl_c = batch_kl(&c_mean, &c_log_var, &zeros, &zeros, 0.0).per_row;

    let mut r = vec![0.0; sets.n_sets()];
    let mut kz = vec![0.0; sets.n_sets()];
    for (i, &s) in sets.set_of.iter().enumerate() {
        r[s] += recon[i];
        kz[s] += kl_z[i];
    }
    let terms = (0..sets.n_sets())
        .map(|s| ElboTerms::new(r[s], kz[s], kl_c[s]))
        .collect();
    let tape = NsTape {
        sets: sets.clone(),
        enc,
        stat,
        stat_raw,
        c_log_var,
        inf,
        inf_raw,
        qz_mean,
        qz_log_var,
        prior,
        prior_raw,
        pz_mean,
        pz_log_var,
        c_mean,
        dec,
        mu,
    };
    (terms, tape)
}

/// Accumulates the gradient of `-scale · Σ_sets elbo` into the model, with
/// both KL terms weighted by `kl_weight` (1 for the plain bound).
pub fn ns_backward<T: Scalar>(
    model: &mut NsModel<T>,
    tape: &NsTape<T>,
    x: &Fmap<T>,
    noise: &NsNoise<T>,
    scale: f64,
    kl_weight: f64,
) {
    let sets = &tape.sets;
    let dz = model.arch.dim_z;

    let d_mu = pixel_loss_grad(x, &tape.mu, scale);
    let d_zc = model.decoder.backward(&tape.dec, &d_mu);
    let (d_z, mut d_c_rep) = d_zc.hsplit(dz);

    let kl_z = batch_kl(
        &tape.qz_mean,
        &tape.qz_log_var,
        &tape.pz_mean,
        &tape.pz_log_var,
        scale * kl_weight,
    );
    let mut d_inf_raw = reparam_rows_backward(&tape.qz_log_var, &noise.eps_z, &d_z);
    d_inf_raw.add(&kl_z.d_q);
    clamp_log_var_backward(&tape.inf_raw, &mut d_inf_raw);
    let d_inf_in = model
        .inference
        .backward(&tape.inf, &d_inf_raw, true)
        .unwrap();
    let (mut dh, d_c_rep_inf) = d_inf_in.hsplit(model.arch.feature_dim);
    d_c_rep.add(&d_c_rep_inf);

    let mut d_prior_raw = kl_z.d_p.scatter_add_rows(&sets.set_of, sets.n_sets());
    clamp_log_var_backward(&tape.prior_raw, &mut d_prior_raw);
    let d_c_prior = model
        .latent_decoder
        .backward(&tape.prior, &d_prior_raw, true)
        .unwrap();

    let mut d_c = d_c_rep.scatter_add_rows(&sets.set_of, sets.n_sets());
    d_c.add(&d_c_prior);

    let zeros = Mat::zeros(tape.c_mean.rows, tape.c_mean.cols);
    let kl_c = batch_kl(
        &tape.c_mean,
        &tape.c_log_var,
        &zeros,
        &zeros,
        scale * kl_weight,
    );
    let mut d_stat_raw = reparam_rows_backward(&tape.c_log_var, &noise.eps_c, &d_c);
    d_stat_raw.add(&kl_c.d_q);
    clamp_log_var_backward(&tape.stat_raw, &mut d_stat_raw);
    let dh_stat = model.statistic.backward(&tape.stat, sets, &d_stat_raw);
    dh.add(&dh_stat);
    model.encoder.backward(&tape.enc, &dh);
}

/// Single-sample bound for one door set.
pub fn ns_elbo<T: Scalar, R: Rng + ?Sized>(
    model: &NsModel<T>,
    door_set: &DoorSet,
    rng: &mut R,
) -> Result<ElboTerms> {
    if door_set.images.is_empty() {
        return Err(crate::Error::invalid("door set has no images"));
    }
    let x = images_to_fmap(&door_set.images, model.arch.image_size)?;
    let sets = SetIndex::uniform(1, door_set.images.len());
    let noise = NsNoise::sample(model, &sets, rng);
    Ok(ns_forward(model, &x, &sets, &noise).0[0])
}

pub struct VaeTape<T> {
    enc: EncoderCache<T>,
    h: Mat<T>,
    raw: Mat<T>,
    mean: Mat<T>,
    log_var: Mat<T>,
    dec: DecoderCache<T>,
    mu: Fmap<T>,
}

/// Per-image bound against a standard-normal prior; the whole KL is
/// reported as `kl_z`.
pub fn vae_forward<T: Scalar>(
    model: &VaeModel<T>,
    x: &Fmap<T>,
    eps: &Mat<T>,
) -> (Vec<ElboTerms>, VaeTape<T>) {
    let (h, enc) = model.encoder.forward_cached(x);
    let raw = model.to_latent.forward(&h);
    let (mean, log_var) = split_head(&raw);
    let u = reparam_rows(&mean, &log_var, eps);
    let (mu, dec) = model.decoder.forward_cached(&u);
    let recon = pixel_log_likelihood(x, &mu);
    let zeros = Mat::zeros(mean.rows, mean.cols);
    let kl = batch_kl(&mean, &log_var, &zeros, &zeros, 0.0).per_row;
    let terms = recon
        .iter()
        .zip(&kl)
        .map(|(&r, &k)| ElboTerms::new(r, k, 0.0))
        .collect();
    let tape = VaeTape {
        enc,
        h,
        raw,
        mean,
        log_var,
        dec,
        mu,
    };
    (terms, tape)
}

pub fn vae_backward<T: Scalar>(
    model: &mut VaeModel<T>,
    tape: &VaeTape<T>,
    x: &Fmap<T>,
    eps: &Mat<T>,
    scale: f64,
    kl_weight: f64,
) {
    let d_mu = pixel_loss_grad(x, &tape.mu, scale);
    let d_u = model.decoder.backward(&tape.dec, &d_mu);
    let zeros = Mat::zeros(tape.mean.rows, tape.mean.cols);
    let kl = batch_kl(&tape.mean, &tape.log_var, &zeros, &zeros, scale * kl_weight);
    let mut d_raw = reparam_rows_backward(&tape.log_var, eps, &d_u);
    d_raw.add(&kl.d_q);
    clamp_log_var_backward(&tape.raw, &mut d_raw);
    let dh = model.to_latent.backward(&tape.h, &d_raw, true).unwrap();
    model.encoder.backward(&tape.enc, &dh);
}

pub fn vae_elbo<T: Scalar, R: Rng + ?Sized>(
    model: &VaeModel<T>,
    image: &Image,
    rng: &mut R,
) -> Result<ElboTerms> {
    let x = images_to_fmap(std::slice::from_ref(image), model.arch.image_size)?;
    let eps = normal_noise(1, model.dim_latent(), rng);
    Ok(vae_forward(model, &x, &eps).0[0])
}
