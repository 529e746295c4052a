//! The convolutional encoder, the set-pooling statistic network and the
//! convolutional observation decoder.

use rand::Rng;

use super::arch::Arch;
use super::layers::{
    elu_backward, elu_inplace, module_join, sigmoid, Conv2d, ConvTranspose2d, Linear, Mlp,
    MlpCache, Module, NamedParams, NamedParamsMut, DOWNSAMPLE,
};
use super::scalar::Scalar;
use super::tensor::{Fmap, Mat};

/// Stride-2 convolutions with ELU, flattened into one fully connected ELU
/// layer producing the per-image embedding `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub convs: Vec<Conv2d<T>>,
    pub fc: Linear<T>,
    bottom: usize,
}

pub struct EncoderCache<T> {
    cols: Vec<Vec<T>>,
    in_dims: Vec<(usize, usize, usize)>,
    conv_out: Vec<Fmap<T>>,
    flat: Mat<T>,
    out: Mat<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut prev = 3;
        for &c in &arch.channels {
            convs.push(Conv2d::new(prev, c, DOWNSAMPLE, rng));
            prev = c;
        }
        let bottom = arch.bottom_size();
        let fc = Linear::new(prev * bottom * bottom, arch.feature_dim, rng);
        Self { convs, fc, bottom }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.outputs()
    }

    pub fn forward(&self, x: &Fmap<T>) -> Mat<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Fmap<T>) -> (Mat<T>, EncoderCache<T>) {
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut in_dims = Vec::with_capacity(self.convs.len());
        let mut conv_out: Vec<Fmap<T>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = conv_out.last().unwrap_or(x);
            in_dims.push((input.n, input.h, input.w));
            let (mut y, c) = conv.forward(input);
            elu_inplace(&mut y.data);
            cols.push(c);
            conv_out.push(y);
        }
        let last = conv_out.last().unwrap();
        debug_assert_eq!(last.h, self.bottom);
        let flat = last.to_rows();
        let mut out = self.fc.forward(&flat);
        elu_inplace(&mut out.data);
        let cache = EncoderCache {
            cols,
            in_dims,
            conv_out,
            flat,
            out: out.clone(),
        };
        (out, cache)
    }

    /// Accumulates parameter gradients; the image gradient is not needed.
    pub fn backward(&mut self, cache: &EncoderCache<T>, dh: &Mat<T>) {
        let mut g = dh.clone();
        elu_backward(&mut g.data, &cache.out.data);
        let dflat = self.fc.backward(&cache.flat, &g, true).unwrap();
        let last = cache.conv_out.last().unwrap();
        let mut dy = Fmap::from_rows(&dflat, last.c, last.h, last.w);
        for i in (0..self.convs.len()).rev() {
            elu_backward(&mut dy.data, &cache.conv_out[i].data);
            match self.convs[i].backward(cache.in_dims[i], &cache.cols[i], &dy, i > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.convs.collect(&module_join(prefix, "conv"), out);
        self.fc.collect(&module_join(prefix, "fc"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.convs.collect_mut(&module_join(prefix, "conv"), out);
        self.fc.collect_mut(&module_join(prefix, "fc"), out);
    }
}

/// Assignment of rows (images) to sets (doors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetIndex {
    pub set_of: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl SetIndex {
    pub fn uniform(n_sets: usize, per_set: usize) -> Self {
        Self::from_sizes(&vec![per_set; n_sets])
    }

    pub fn from_sizes(sizes: &[usize]) -> Self {
        let set_of = sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s, n))
            .collect();
        Self {
            set_of,
            sizes: sizes.to_vec(),
        }
    }

    pub fn n_sets(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_items(&self) -> usize {
        self.set_of.len()
    }

    /// Mean of the rows belonging to each set. Each column is summed in
    /// sorted order, so the result is bit-identical under any permutation
    /// of a set's members.
    pub fn mean_pool<T: Scalar>(&self, x: &Mat<T>) -> Mat<T> {
        let mut members = vec![Vec::new(); self.n_sets()];
        for (i, &s) in self.set_of.iter().enumerate() {
            members[s].push(i);
        }
        let mut out = Mat::zeros(self.n_sets(), x.cols);
        let mut column = Vec::new();
        for (s, rows) in members.iter().enumerate() {
            let inv = T::one() / T::lit(rows.len().max(1) as f64);
            for j in 0..x.cols {
                column.clear();
                column.extend(rows.iter().map(|&i| x.data[i * x.cols + j]));
                column.sort_by(|a, b| a.f64().total_cmp(&b.f64()));
                let sum = column.iter().fold(T::zero(), |acc, &v| acc + v);
                out.data[s * x.cols + j] = sum * inv;
            }
        }
        out
    }

    pub fn mean_pool_backward<T: Scalar>(&self, d_pooled: &Mat<T>) -> Mat<T> {
        let mut out = d_pooled.select_rows(&self.set_of);
        for (i, &s) in self.set_of.iter().enumerate() {
            let inv = T::one() / T::lit(self.sizes[s] as f64);
            out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        }
        out
    }
}

/// Per-image ELU body, mean pooling over each set, then a linear head to
/// `[mean | log_var]` of the context.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticNet<T> {
    pub body: Mlp<T>,
    pub head: Linear<T>,
}

pub struct StatisticCache<T> {
    body: MlpCache<T>,
    pooled: Mat<T>,
}

impl<T: Scalar> StatisticNet<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Self {
        let mut widths = vec![arch.feature_dim];
        widths.extend(std::iter::repeat_n(arch.hidden_units, arch.hidden_layers));
        let body = Mlp::new(&widths, true, rng);
        let head = Linear::new(*widths.last().unwrap(), 2 * arch.dim_c, rng);
        Self { body, head }
    }

    pub fn forward_cached(&self, h: &Mat<T>, sets: &SetIndex) -> (Mat<T>, StatisticCache<T>) {
        let (hidden, body) = self.body.forward_cached(h);
        let pooled = sets.mean_pool(&hidden);
        let raw = self.head.forward(&pooled);
        (raw, StatisticCache { body, pooled })
    }

    pub fn backward(
        &mut self,
        cache: &StatisticCache<T>,
        sets: &SetIndex,
        d_raw: &Mat<T>,
    ) -> Mat<T> {
        let d_pooled = self.head.backward(&cache.pooled, d_raw, true).unwrap();
        let d_hidden = sets.mean_pool_backward(&d_pooled);
        self.body.backward(&cache.body, &d_hidden, true).unwrap()
    }
}

impl<T: Scalar> Module<T> for StatisticNet<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.body.collect(&module_join(prefix, "body"), out);
        self.head.collect(&module_join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.body.collect_mut(&module_join(prefix, "body"), out);
        self.head.collect_mut(&module_join(prefix, "head"), out);
    }
}

/// Latent vector → image mean: two fully connected ELU layers, then
/// transposed convolutions mirroring the encoder, with a logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDecoder<T> {
    pub fc_in: Linear<T>,
    pub fc_map: Linear<T>,
    pub deconvs: Vec<ConvTranspose2d<T>>,
    base_channels: usize,
    base_size: usize,
}

pub struct DecoderCache<T> {
    latent: Mat<T>,
    a1: Mat<T>,
    a2: Mat<T>,
    /// Activated input of every transposed convolution.
    deconv_in: Vec<Fmap<T>>,
    out: Fmap<T>,
}

impl<T: Scalar> ObservationDecoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Arch, inputs: usize, rng: &mut R) -> Self {
        let base_channels = *arch.channels.last().unwrap();
        let base_size = arch.bottom_size();
        let fc_in = Linear::new(inputs, arch.feature_dim, rng);
        let fc_map = Linear::new(arch.feature_dim, base_channels * base_size * base_size, rng);
        let mut targets: Vec<usize> = arch.channels.iter().rev().skip(1).copied().collect();
        targets.push(3);
        let mut deconvs = Vec::new();
        let mut prev = base_channels;
        for c in targets {
            deconvs.push(ConvTranspose2d::new(prev, c, DOWNSAMPLE, rng));
            prev = c;
        }
        Self {
            fc_in,
            fc_map,
            deconvs,
            base_channels,
            base_size,
        }
    }

    pub fn inputs(&self) -> usize {
        self.fc_in.inputs()
    }

    pub fn forward(&self, latent: &Mat<T>) -> Fmap<T> {
        self.forward_cached(latent).0
    }

    pub fn forward_cached(&self, latent: &Mat<T>) -> (Fmap<T>, DecoderCache<T>) {
        let mut a1 = self.fc_in.forward(latent);
        elu_inplace(&mut a1.data);
        let mut a2 = self.fc_map.forward(&a1);
        elu_inplace(&mut a2.data);
        let mut x = Fmap::from_rows(&a2, self.base_channels, self.base_size, self.base_size);
        let mut deconv_in = Vec::with_capacity(self.deconvs.len());
        let last = self.deconvs.len() - 1;
        for (i, d) in self.deconvs.iter().enumerate() {
            let mut y = d.forward(&x);
            if i < last {
                elu_inplace(&mut y.data);
            } else {
                y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            deconv_in.push(std::mem::replace(&mut x, y));
        }
        let cache = DecoderCache {
            latent: latent.clone(),
            a1,
            a2,
            deconv_in,
            out: x.clone(),
        };
        (x, cache)
    }

    /// `d_mean` is the gradient with respect to the (post-logistic) image mean.
    pub fn backward(&mut self, cache: &DecoderCache<T>, d_mean: &Fmap<T>) -> Mat<T> {
        let mut g = d_mean.clone();
        for (gv, &m) in g.data.iter_mut().zip(&cache.out.data) {
            *gv *= m * (T::one() - m);
        }
        for i in (0..self.deconvs.len()).rev() {
            let input = &cache.deconv_in[i];
            g = self.deconvs[i].backward(input, &g, true).unwrap();
            if i > 0 {
                elu_backward(&mut g.data, &input.data);
            }
        }
        let mut d_a2 = g.to_rows();
        elu_backward(&mut d_a2.data, &cache.a2.data);
        let mut d_a1 = self.fc_map.backward(&cache.a1, &d_a2, true).unwrap();
        elu_backward(&mut d_a1.data, &cache.a1.data);
        self.fc_in.backward(&cache.latent, &d_a1, true).unwrap()
    }
}

impl<T: Scalar> Module<T> for ObservationDecoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.fc_in.collect(&module_join(prefix, "fc_in"), out);
        self.fc_map.collect(&module_join(prefix, "fc_map"), out);
        self.deconvs.collect(&module_join(prefix, "deconv"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.fc_in.collect_mut(&module_join(prefix, "fc_in"), out);
        self.fc_map.collect_mut(&module_join(prefix, "fc_map"), out);
        self.deconvs
            .collect_mut(&module_join(prefix, "deconv"), out);
    }
}

pub fn mlp_widths(inputs: usize, arch: &Arch, outputs: usize) -> Vec<usize> {
    let mut w = vec![inputs];
    w.extend(std::iter::repeat_n(arch.hidden_units, arch.hidden_layers));
    w.push(outputs);
    w
}
