//! Single-image VAE baseline: the statistician's encoder, one linear layer
//! to a `dim_c + dim_z` latent, and the same observation decoder.

use rand::Rng;

use super::arch::Arch;
use super::blocks::{Encoder, EncoderCache, ObservationDecoder};
use super::gaussian::{clamp_log_var_backward, split_head, GaussianParams};
use super::layers::{module_join, Linear, Module, NamedParams, NamedParamsMut};
use super::scalar::Scalar;
use super::tensor::{Fmap, Mat};
use super::{fmap_to_image, images_to_fmap};
use crate::error::Result;
use crate::imageio::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    pub arch: Arch,
    pub encoder: Encoder<T>,
    pub to_latent: Linear<T>,
    pub decoder: ObservationDecoder<T>,
}

impl<T: Scalar> VaeModel<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = Encoder::new(arch, rng);
        let to_latent = Linear::new(arch.feature_dim, 2 * arch.vae_latent(), rng);
        let decoder = ObservationDecoder::new(arch, arch.vae_latent(), rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            to_latent,
            decoder,
        })
    }

    pub fn dim_latent(&self) -> usize {
        self.arch.vae_latent()
    }

    /// Posterior over the latent and the reconstruction at its mean.
    pub fn forward(&self, image: &Image) -> Result<(GaussianParams<T>, Image)> {
        let x = images_to_fmap(std::slice::from_ref(image), self.arch.image_size)?;
        let raw = self.to_latent.forward(&self.encoder.forward(&x));
        let q = GaussianParams::from_head_row(raw.row(0));
        let mean = Mat::from_vec(1, q.dim(), q.mean.clone());
        let recon = fmap_to_image(&self.decoder.forward(&mean), 0);
        Ok((q, recon))
    }

    pub fn decode_rows(&self, latent: &Mat<T>) -> Vec<Image> {
        let out = self.decoder.forward(latent);
        (0..latent.rows).map(|i| fmap_to_image(&out, i)).collect()
    }

    /// Latent means with a tape for end-to-end finetuning.
    pub fn embed_cached(&self, x: &Fmap<T>) -> (Mat<T>, VaeEmbedTape<T>) {
        let (h, enc) = self.encoder.forward_cached(x);
        let raw = self.to_latent.forward(&h);
        let (mean, log_var) = split_head(&raw);
        let tape = VaeEmbedTape {
            enc,
            h,
            raw,
            log_var,
        };
        (mean, tape)
    }

    pub fn embed_backward(&mut self, tape: &VaeEmbedTape<T>, d_mean: &Mat<T>) {
        let d = self.dim_latent();
        let mut d_raw = Mat::hcat(d_mean, &Mat::zeros(d_mean.rows, d));
        clamp_log_var_backward(&tape.raw, &mut d_raw);
        let dh = self.to_latent.backward(&tape.h, &d_raw, true).unwrap();
        self.encoder.backward(&tape.enc, &dh);
    }

    pub fn embedding_params_mut(&mut self) -> NamedParamsMut<'_, T> {
        let mut out = Vec::new();
        self.encoder.collect_mut("encoder", &mut out);
        self.to_latent.collect_mut("to_latent", &mut out);
        out
    }
}

pub struct VaeEmbedTape<T> {
    enc: EncoderCache<T>,
    h: Mat<T>,
    raw: Mat<T>,
    pub log_var: Mat<T>,
}

impl<T: Scalar> Module<T> for VaeModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.encoder.collect(&module_join(prefix, "encoder"), out);
        self.to_latent
            .collect(&module_join(prefix, "to_latent"), out);
        self.decoder.collect(&module_join(prefix, "decoder"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.encoder
            .collect_mut(&module_join(prefix, "encoder"), out);
        self.to_latent
            .collect_mut(&module_join(prefix, "to_latent"), out);
        self.decoder
            .collect_mut(&module_join(prefix, "decoder"), out);
    }
}
