//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Forward passes borrow the layer immutably; backward passes accumulate
//! into each parameter's `grad` buffer and return the input gradient when
//! asked for it.

use rand::Rng;

use super::scalar::{gemm, Scalar};
use super::tensor::{Fmap, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    /// Uniform in `±sqrt(3 / fan_in)`, i.e. unit-variance pre-activations
    /// for unit-variance inputs.
    pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let bound = (3.0 / fan_in as f64).sqrt();
        for v in &mut p.value {
            *v = T::lit(bound * (2.0 * rng.random::<f64>() - 1.0));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub type NamedParams<'a, T> = Vec<(String, &'a Param<T>)>;
pub type NamedParamsMut<'a, T> = Vec<(String, &'a mut Param<T>)>;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning parameters, visited in a fixed order under
/// hierarchical dotted names.
pub trait Module<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>);

    fn params(&self) -> NamedParams<'_, T> {
        let mut v = Vec::new();
        self.collect("", &mut v);
        v
    }

    fn params_mut(&mut self) -> NamedParamsMut<'_, T> {
        let mut v = Vec::new();
        self.collect_mut("", &mut v);
        v
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        for (i, m) in self.iter().enumerate() {
            m.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

// ---------------------------------------------------------------------------
// Activations

#[inline]
fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

pub fn elu_inplace<T: Scalar>(data: &mut [T]) {
    data.iter_mut().for_each(|v| *v = elu(*v));
}

/// Multiplies `grad` by the ELU derivative, written in terms of the output.
pub fn elu_backward<T: Scalar>(grad: &mut [T], out: &[T]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        if y <= T::zero() {
            *g *= y + T::one();
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Fully connected

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::fan_in_uniform(&[outputs, inputs], inputs, rng),
            bias: Param::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        assert_eq!(x.cols, self.inputs(), "linear input width");
        let mut y = Mat::zeros(x.rows, self.outputs());
        gemm(
            false,
            true,
            x.rows,
            self.outputs(),
            self.inputs(),
            T::one(),
            &x.data,
            &self.weight.value,
            T::zero(),
            &mut y.data,
        );
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias.value) {
                *v += *b;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Mat<T>, dy: &Mat<T>, need_dx: bool) -> Option<Mat<T>> {
        let (n, o, i) = (x.rows, self.outputs(), self.inputs());
        gemm(
            true,
            false,
            o,
            i,
            n,
            T::one(),
            &dy.data,
            &x.data,
            T::one(),
            &mut self.weight.grad,
        );
        for r in 0..n {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += *d;
            }
        }
        need_dx.then(|| {
            let mut dx = Mat::zeros(n, i);
            gemm(
                false,
                false,
                n,
                i,
                o,
                T::one(),
                &dy.data,
                &self.weight.value,
                T::zero(),
                &mut dx.data,
            );
            dx
        })
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Stack of linear layers with ELU between them; the last layer is linear
/// unless `final_elu` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub final_elu: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input to each layer; entry `i + 1` is the activated output of layer `i`.
    inputs: Vec<Mat<T>>,
    output: Mat<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], final_elu: bool, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers, final_elu }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.final_elu
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        self.forward_cached(x).1.output
    }

    pub fn forward_cached(&self, x: &Mat<T>) -> (Mat<T>, MlpCache<T>) {
        let mut inputs = vec![x.clone()];
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur);
            if self.activated(i) {
                elu_inplace(&mut cur.data);
            }
            if i + 1 < self.layers.len() {
                inputs.push(cur.clone());
            }
        }
        let cache = MlpCache {
            inputs,
            output: cur.clone(),
        };
        (cur, cache)
    }

    pub fn backward(&mut self, cache: &MlpCache<T>, dy: &Mat<T>, need_dx: bool) -> Option<Mat<T>> {
        let n = self.layers.len();
        let mut grad = dy.clone();
        for i in (0..n).rev() {
            if self.activated(i) {
                let out = if i + 1 < n {
                    &cache.inputs[i + 1]
                } else {
                    &cache.output
                };
                elu_backward(&mut grad.data, &out.data);
            }
            let want = need_dx || i > 0;
            grad = self.layers[i].backward(&cache.inputs[i], &grad, want)?;
        }
        Some(grad)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.layers.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.layers.collect_mut(prefix, out);
    }
}

// ---------------------------------------------------------------------------
// Convolutions

/// Geometry shared by a strided convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub const DOWNSAMPLE: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 2,
    pad: 1,
};

impl ConvGeom {
    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Unfolds patches: rows `(c, ky, kx)`, columns `(n, oy, ox)`.
pub fn im2col<T: Scalar>(x: &Fmap<T>, g: ConvGeom, oh: usize, ow: usize) -> Vec<T> {
    let k = g.kernel;
    let cols_per_row = x.n * oh * ow;
    let mut cols = vec![T::zero(); x.c * k * k * cols_per_row];
    for c in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst_row = &mut cols[row * cols_per_row..(row + 1) * cols_per_row];
                for n in 0..x.n {
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = x.idx(c, n, iy as usize, 0);
                        let dst = (n * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                dst_row[dst + ox] = x.data[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds columns back onto a `[c, n, h, w]` map.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
) -> Fmap<T> {
    let k = g.kernel;
    let mut x = Fmap::zeros(c, n, h, w);
    let cols_per_row = n * oh * ow;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src_row = &cols[row * cols_per_row..(row + 1) * cols_per_row];
                for b in 0..n {
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = x.idx(ch, b, iy as usize, 0);
                        let src = (b * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                x.data[dst + ix as usize] += src_row[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_channel_bias<T: Scalar>(y: &mut Fmap<T>, bias: &[T]) {
    let per = y.n * y.h * y.w;
    for (c, b) in bias.iter().enumerate() {
        y.data[c * per..(c + 1) * per]
            .iter_mut()
            .for_each(|v| *v += *b);
    }
}

fn accumulate_channel_bias_grad<T: Scalar>(grad: &mut [T], dy: &Fmap<T>) {
    let per = dy.n * dy.h * dy.w;
    for (c, g) in grad.iter_mut().enumerate() {
        *g += dy.data[c * per..(c + 1) * per].iter().copied().sum::<T>();
    }
}

/// Strided 2-D convolution, weight `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeom,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let k = geom.kernel;
        Self {
            weight: Param::fan_in_uniform(&[outputs, inputs, k, k], inputs * k * k, rng),
            bias: Param::zeros(&[outputs]),
            geom,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape[0], self.weight.shape[1])
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward(&self, x: &Fmap<T>) -> (Fmap<T>, Vec<T>) {
        let (out_c, in_c) = self.dims();
        assert_eq!(x.c, in_c, "conv input channels");
        let (oh, ow) = (self.geom.out_size(x.h), self.geom.out_size(x.w));
        let cols = im2col(x, self.geom, oh, ow);
        let kk = in_c * self.geom.kernel * self.geom.kernel;
        let m = x.n * oh * ow;
        let mut y = Fmap::zeros(out_c, x.n, oh, ow);
        gemm(
            false,
            false,
            out_c,
            m,
            kk,
            T::one(),
            &self.weight.value,
            &cols,
            T::zero(),
            &mut y.data,
        );
        add_channel_bias(&mut y, &self.bias.value);
        (y, cols)
    }

    pub fn backward(
        &mut self,
        input_dims: (usize, usize, usize),
        cols: &[T],
        dy: &Fmap<T>,
        need_dx: bool,
    ) -> Option<Fmap<T>> {
        let (out_c, in_c) = self.dims();
        let (n, h, w) = input_dims;
        let kk = in_c * self.geom.kernel * self.geom.kernel;
        let m = dy.n * dy.h * dy.w;
        gemm(
            false,
            true,
            out_c,
            kk,
            m,
            T::one(),
            &dy.data,
            cols,
            T::one(),
            &mut self.weight.grad,
        );
        accumulate_channel_bias_grad(&mut self.bias.grad, dy);
        need_dx.then(|| {
            let mut dcols = vec![T::zero(); kk * m];
            gemm(
                true,
                false,
                kk,
                m,
                out_c,
                T::one(),
                &self.weight.value,
                &dy.data,
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, in_c, n, h, w, self.geom, dy.h, dy.w)
        })
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Transposed convolution doubling the spatial size, weight `[in, out, k, k]`.
/// It is the adjoint of a [`Conv2d`] with the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeom,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = (inputs * k * k / (geom.stride * geom.stride)).max(1);
        Self {
            weight: Param::fan_in_uniform(&[inputs, outputs, k, k], fan_in, rng),
            bias: Param::zeros(&[outputs]),
            geom,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape[0], self.weight.shape[1])
    }

    pub fn forward(&self, x: &Fmap<T>) -> Fmap<T> {
        let (in_c, out_c) = self.dims();
        assert_eq!(x.c, in_c, "transposed conv input channels");
        let kk = out_c * self.geom.kernel * self.geom.kernel;
        let m = x.n * x.h * x.w;
        let mut cols = vec![T::zero(); kk * m];
        gemm(
            true,
            false,
            kk,
            m,
            in_c,
            T::one(),
            &self.weight.value,
            &x.data,
            T::zero(),
            &mut cols,
        );
        let (oh, ow) = (x.h * self.geom.stride, x.w * self.geom.stride);
        let mut y = col2im(&cols, out_c, x.n, oh, ow, self.geom, x.h, x.w);
        add_channel_bias(&mut y, &self.bias.value);
        y
    }

    pub fn backward(&mut self, x: &Fmap<T>, dy: &Fmap<T>, need_dx: bool) -> Option<Fmap<T>> {
        let (in_c, out_c) = self.dims();
        let kk = out_c * self.geom.kernel * self.geom.kernel;
        let m = x.n * x.h * x.w;
        let dcols = im2col(dy, self.geom, x.h, x.w);
        gemm(
            false,
            true,
            in_c,
            kk,
            m,
            T::one(),
            &x.data,
            &dcols,
            T::one(),
            &mut self.weight.grad,
        );
        accumulate_channel_bias_grad(&mut self.bias.grad, dy);
        need_dx.then(|| {
            let mut dx = Fmap::zeros(in_c, x.n, x.h, x.w);
            gemm(
                false,
                false,
                in_c,
                m,
                kk,
                T::one(),
                &self.weight.value,
                &dcols,
                T::zero(),
                &mut dx.data,
            );
            dx
        })
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

pub(crate) fn module_join(prefix: &str, name: &str) -> String {
    join(prefix, name)
}
