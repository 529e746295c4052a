//! The neural statistician: shared encoder, statistic network q(c|D),
//! inference network q(z|x,c), latent decoder p(z|c) and observation
//! decoder p(x|z,c).

use rand::Rng;

use super::arch::Arch;
use super::blocks::{
    mlp_widths, Encoder, EncoderCache, ObservationDecoder, SetIndex, StatisticCache, StatisticNet,
};
use super::gaussian::{clamp_log_var_backward, split_head, GaussianParams};
use super::layers::{module_join, Mlp, MlpCache, Module, NamedParams, NamedParamsMut};
use super::scalar::Scalar;
use super::tensor::{Fmap, Mat};
use super::{fmap_to_image, images_to_fmap};
use crate::error::{Error, Result};
use crate::imageio::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct NsModel<T> {
    pub arch: Arch,
    pub encoder: Encoder<T>,
    pub statistic: StatisticNet<T>,
    pub inference: Mlp<T>,
    pub latent_decoder: Mlp<T>,
    pub decoder: ObservationDecoder<T>,
}

impl<T: Scalar> NsModel<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = Encoder::new(arch, rng);
        let statistic = StatisticNet::new(arch, rng);
        let inference = Mlp::new(
            &mlp_widths(arch.feature_dim + arch.dim_c, arch, 2 * arch.dim_z),
            false,
            rng,
        );
        let latent_decoder = Mlp::new(&mlp_widths(arch.dim_c, arch, 2 * arch.dim_z), false, rng);
        let decoder = ObservationDecoder::new(arch, arch.dim_z + arch.dim_c, rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            statistic,
            inference,
            latent_decoder,
            decoder,
        })
    }

    pub fn encoder_forward(&self, images: &[Image]) -> Result<Mat<T>> {
        let x = images_to_fmap(images, self.arch.image_size)?;
        Ok(self.encoder.forward(&x))
    }

    /// q(c | D) from the encoder features of one set.
    pub fn statistic_forward(&self, h: &Mat<T>) -> Result<GaussianParams<T>> {
        if h.rows == 0 {
            return Err(Error::invalid("statistic network needs at least one image"));
        }
        check_len("feature", h.cols, self.arch.feature_dim)?;
        let (raw, _) = self
            .statistic
            .forward_cached(h, &SetIndex::uniform(1, h.rows));
        Ok(GaussianParams::from_head_row(raw.row(0)))
    }

    /// q(z | x, c) from one image's features and a context.
    pub fn inference_forward(&self, h_i: &[T], c: &[T]) -> Result<GaussianParams<T>> {
        check_len("feature", h_i.len(), self.arch.feature_dim)?;
        check_len("context", c.len(), self.arch.dim_c)?;
        let input = Mat::from_vec(1, h_i.len() + c.len(), [h_i, c].concat());
        Ok(GaussianParams::from_head_row(
            self.inference.forward(&input).row(0),
        ))
    }

    /// p(z | c).
    pub fn latent_decoder_forward(&self, c: &[T]) -> Result<GaussianParams<T>> {
        check_len("context", c.len(), self.arch.dim_c)?;
        let input = Mat::from_vec(1, c.len(), c.to_vec());
        Ok(GaussianParams::from_head_row(
            self.latent_decoder.forward(&input).row(0),
        ))
    }

    /// Mean image of p(x | z, c).
    pub fn observation_decoder_forward(&self, z: &[T], c: &[T]) -> Result<Image> {
        check_len("instance latent", z.len(), self.arch.dim_z)?;
        check_len("context", c.len(), self.arch.dim_c)?;
        let input = Mat::from_vec(1, z.len() + c.len(), [z, c].concat());
        Ok(fmap_to_image(&self.decoder.forward(&input), 0))
    }

    /// Decodes many `[z | c]` rows at once.
    pub fn decode_rows(&self, zc: &Mat<T>) -> Vec<Image> {
        let out = self.decoder.forward(zc);
        (0..zc.rows).map(|i| fmap_to_image(&out, i)).collect()
    }

    /// Posterior-mean embeddings of a batch of sets.
    pub fn posterior_means(&self, x: &Fmap<T>, sets: &SetIndex) -> PosteriorMeans<T> {
        let (_, tape) = self.embed_cached(x, sets);
        PosteriorMeans {
            c_mean: tape.c_mean,
            c_log_var: tape.c_log_var,
            z_mean: tape.z_mean,
            z_log_var: tape.z_log_var,
        }
    }

    /// Per-image `[mean c of its set | mean z]` features with a tape for
    /// end-to-end finetuning.
    pub fn embed_cached(&self, x: &Fmap<T>, sets: &SetIndex) -> (Mat<T>, EmbedTape<T>) {
        let (h, enc) = self.encoder.forward_cached(x);
        let (stat_raw, stat) = self.statistic.forward_cached(&h, sets);
        let (c_mean, c_log_var) = split_head(&stat_raw);
        let c_rep = c_mean.select_rows(&sets.set_of);
        let inf_in = Mat::hcat(&h, &c_rep);
        let (inf_raw, inf) = self.inference.forward_cached(&inf_in);
        let (z_mean, z_log_var) = split_head(&inf_raw);
        let emb = Mat::hcat(&c_rep, &z_mean);
        let tape = EmbedTape {
            sets: sets.clone(),
            enc,
            stat,
            stat_raw,
            inf,
            inf_raw,
            c_mean,
            c_log_var,
            z_mean,
            z_log_var,
        };
        (emb, tape)
    }

    pub fn embed_backward(&mut self, tape: &EmbedTape<T>, d_emb: &Mat<T>) {
        let dc = self.arch.dim_c;
        let dz = self.arch.dim_z;
        let (d_c_rep_a, d_z_mean) = d_emb.hsplit(dc);
        let mut d_inf_raw = Mat::hcat(&d_z_mean, &Mat::zeros(d_z_mean.rows, dz));
        clamp_log_var_backward(&tape.inf_raw, &mut d_inf_raw);
        let d_inf_in = self
            .inference
            .backward(&tape.inf, &d_inf_raw, true)
            .unwrap();
        let (mut dh, d_c_rep_b) = d_inf_in.hsplit(self.arch.feature_dim);
        let mut d_c_rep = d_c_rep_a;
        d_c_rep.add(&d_c_rep_b);
        let d_c = d_c_rep.scatter_add_rows(&tape.sets.set_of, tape.sets.n_sets());
        let d_stat_raw = Mat::hcat(&d_c, &Mat::zeros(d_c.rows, dc));
        let dh_stat = self.statistic.backward(&tape.stat, &tape.sets, &d_stat_raw);
        dh.add(&dh_stat);
        self.encoder.backward(&tape.enc, &dh);
    }

    /// Parameters on the path from images to posterior-mean embeddings.
    pub fn embedding_params_mut(&mut self) -> NamedParamsMut<'_, T> {
        let mut out = Vec::new();
        self.encoder.collect_mut("encoder", &mut out);
        self.statistic.collect_mut("statistic", &mut out);
        self.inference.collect_mut("inference", &mut out);
        out
    }
}

pub struct PosteriorMeans<T> {
    pub c_mean: Mat<T>,
    pub c_log_var: Mat<T>,
    pub z_mean: Mat<T>,
    pub z_log_var: Mat<T>,
}

pub struct EmbedTape<T> {
    sets: SetIndex,
    enc: EncoderCache<T>,
    stat: StatisticCache<T>,
    stat_raw: Mat<T>,
    inf: MlpCache<T>,
    inf_raw: Mat<T>,
    pub c_mean: Mat<T>,
    pub c_log_var: Mat<T>,
    pub z_mean: Mat<T>,
    pub z_log_var: Mat<T>,
}

impl<T> EmbedTape<T> {
    pub fn stat_raw(&self) -> &Mat<T> {
        &self.stat_raw
    }
}

impl<T: Scalar> Module<T> for NsModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.encoder.collect(&module_join(prefix, "encoder"), out);
        self.statistic
            .collect(&module_join(prefix, "statistic"), out);
        self.inference
            .collect(&module_join(prefix, "inference"), out);
        self.latent_decoder
            .collect(&module_join(prefix, "latent_decoder"), out);
        self.decoder.collect(&module_join(prefix, "decoder"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.encoder
            .collect_mut(&module_join(prefix, "encoder"), out);
        self.statistic
            .collect_mut(&module_join(prefix, "statistic"), out);
        self.inference
            .collect_mut(&module_join(prefix, "inference"), out);
        self.latent_decoder
            .collect_mut(&module_join(prefix, "latent_decoder"), out);
        self.decoder
            .collect_mut(&module_join(prefix, "decoder"), out);
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{what} vector has length {got}, expected {want}"
        )));
    }
    Ok(())
}
