//! Diagonal Gaussians: closed-form KL, reparameterised sampling and the
//! `[mean | log_var]` head layout shared by every variational network.

use rand::Rng;
use rand_distr::StandardNormal;

use super::scalar::Scalar;
use super::tensor::Mat;
use crate::error::{Error, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: Vec<T>,
    pub log_var: Vec<T>,
}

impl<T: Scalar> GaussianParams<T> {
    pub fn new(mean: Vec<T>, log_var: Vec<T>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::invalid(format!(
                "mean has {} entries, log_var {}",
                mean.len(),
                log_var.len()
            )));
        }
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            log_var: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Splits one `[mean | raw_log_var]` row, clamping the log-variance.
    pub fn from_head_row(row: &[T]) -> Self {
        let d = row.len() / 2;
        Self {
            mean: row[..d].to_vec(),
            log_var: row[d..].iter().map(|&v| clamp_log_var(v)).collect(),
        }
    }

    pub fn std(&self) -> Vec<T> {
        self.log_var
            .iter()
            .map(|&lv| (lv * T::lit(0.5)).exp())
            .collect()
    }

    /// Log-density at `x`.
    pub fn log_prob(&self, x: &[T]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(x)
            .map(|((&m, &lv), &x)| {
                let (m, lv, x) = (m.f64(), lv.f64(), x.f64());
                -0.5 * ((2.0 * std::f64::consts::PI).ln() + lv + (x - m).powi(2) / lv.exp())
            })
            .sum()
    }
}

/// Smooth clamp `10·tanh(v/10)` into the open log-variance range. Unlike a
/// hard clamp it never zeroes the gradient, so a saturated head can recover.
#[inline]
pub fn clamp_log_var<T: Scalar>(v: T) -> T {
    let k = T::lit(LOG_VAR_MAX);
    k * (v / k).tanh()
}

/// Chain rule through [`clamp_log_var`] for the log-variance half of a
/// `[mean | raw_log_var]` gradient.
pub fn clamp_log_var_backward<T: Scalar>(raw: &Mat<T>, grad: &mut Mat<T>) {
    let d = raw.cols / 2;
    let k = T::lit(LOG_VAR_MAX);
    for r in 0..raw.rows {
        let raw_row = raw.row(r);
        let g = grad.row_mut(r);
        for j in d..2 * d {
            let t = (raw_row[j] / k).tanh();
            g[j] *= T::one() - t * t;
        }
    }
}

/// `[mean | clamped log_var]` split of a head output.
pub fn split_head<T: Scalar>(raw: &Mat<T>) -> (Mat<T>, Mat<T>) {
    let (mean, lv) = raw.hsplit(raw.cols / 2);
    (mean, lv.map(clamp_log_var))
}

/// KL(q || p) between diagonal Gaussians.
pub fn gaussian_kl<T: Scalar>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!(
            "KL between {}-dim and {}-dim Gaussians",
            q.dim(),
            p.dim()
        )));
    }
    Ok((0..q.dim())
        .map(|i| {
            kl_term(
                q.mean[i].f64(),
                q.log_var[i].f64(),
                p.mean[i].f64(),
                p.log_var[i].f64(),
            )
            .value
        })
        .sum())
}

/// One coordinate of the KL and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct KlTerm {
    pub value: f64,
    pub d_q_mean: f64,
    pub d_q_log_var: f64,
    pub d_p_mean: f64,
    pub d_p_log_var: f64,
}

pub fn kl_term(q_mean: f64, q_lv: f64, p_mean: f64, p_lv: f64) -> KlTerm {
    let diff = q_mean - p_mean;
    let inv_p = (-p_lv).exp();
    let ratio = (q_lv - p_lv).exp();
    let value = 0.5 * (p_lv - q_lv + ratio + diff * diff * inv_p - 1.0);
    KlTerm {
        value: value.max(0.0),
        d_q_mean: diff * inv_p,
        d_q_log_var: 0.5 * (ratio - 1.0),
        d_p_mean: -diff * inv_p,
        d_p_log_var: 0.5 * (1.0 - ratio - diff * diff * inv_p),
    }
}

/// Row-wise KL between two `[rows, d]` parameter sets, with gradients
/// written into `[mean | log_var]` shaped buffers scaled by `scale`.
pub struct BatchKl<T> {
    pub per_row: Vec<f64>,
    pub d_q: Mat<T>,
    pub d_p: Mat<T>,
}

pub fn batch_kl<T: Scalar>(
    q_mean: &Mat<T>,
    q_lv: &Mat<T>,
    p_mean: &Mat<T>,
    p_lv: &Mat<T>,
    scale: f64,
) -> BatchKl<T> {
    let (rows, d) = (q_mean.rows, q_mean.cols);
    let mut per_row = vec![0.0; rows];
    let mut d_q = Mat::zeros(rows, 2 * d);
    let mut d_p = Mat::zeros(rows, 2 * d);
    for r in 0..rows {
        for j in 0..d {
            let t = kl_term(
                q_mean.row(r)[j].f64(),
                q_lv.row(r)[j].f64(),
                p_mean.row(r)[j].f64(),
                p_lv.row(r)[j].f64(),
            );
            per_row[r] += t.value;
            d_q.row_mut(r)[j] = T::lit(scale * t.d_q_mean);
            d_q.row_mut(r)[d + j] = T::lit(scale * t.d_q_log_var);
            d_p.row_mut(r)[j] = T::lit(scale * t.d_p_mean);
            d_p.row_mut(r)[d + j] = T::lit(scale * t.d_p_log_var);
        }
    }
    BatchKl { per_row, d_q, d_p }
}

/// `mean + exp(log_var / 2) · ε` with ε ~ N(0, I).
pub fn reparam_sample<T: Scalar, R: Rng + ?Sized>(g: &GaussianParams<T>, rng: &mut R) -> Vec<T> {
    let eps: Vec<T> = (0..g.dim())
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    reparam_with_noise(g, &eps)
}

pub fn reparam_with_noise<T: Scalar>(g: &GaussianParams<T>, eps: &[T]) -> Vec<T> {
    g.mean
        .iter()
        .zip(g.std())
        .zip(eps)
        .map(|((&m, s), &e)| m + s * e)
        .collect()
}

/// Batched reparameterisation over rows.
pub fn reparam_rows<T: Scalar>(mean: &Mat<T>, log_var: &Mat<T>, eps: &Mat<T>) -> Mat<T> {
    let mut out = mean.clone();
    for ((o, &lv), &e) in out.data.iter_mut().zip(&log_var.data).zip(&eps.data) {
        *o += (lv * T::lit(0.5)).exp() * e;
    }
    out
}

/// Pulls a sample gradient back onto `[mean | log_var]`:
/// `∂s/∂mean = 1`, `∂s/∂log_var = ½·exp(log_var/2)·ε`.
pub fn reparam_rows_backward<T: Scalar>(
    log_var: &Mat<T>,
    eps: &Mat<T>,
    d_sample: &Mat<T>,
) -> Mat<T> {
    let (rows, d) = (log_var.rows, log_var.cols);
    let mut out = Mat::zeros(rows, 2 * d);
    for r in 0..rows {
        for j in 0..d {
            let g = d_sample.row(r)[j];
            let lv = log_var.row(r)[j];
            let e = eps.row(r)[j];
            out.row_mut(r)[j] = g;
            out.row_mut(r)[d + j] = g * T::lit(0.5) * (lv * T::lit(0.5)).exp() * e;
        }
    }
    out
}

/// Standard-normal noise matrix.
pub fn normal_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat<T> {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedStream;

    fn g(mean: &[f64], lv: &[f64]) -> GaussianParams<f64> {
        GaussianParams::new(mean.to_vec(), lv.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let q = g(&[0.3, -1.0], &[0.2, -0.5]);
        assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
        let kl = gaussian_kl(&g(&[1.0], &[0.0]), &g(&[0.0], &[0.0])).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&g(&[0.0], &[0.0]), &g(&[0.0, 0.0], &[0.0, 0.0])).is_err());
        assert!(GaussianParams::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn kl_partials_match_finite_differences() {
        let (qm, qv, pm, pv) = (0.4, -0.3, -0.2, 0.7);
        let t = kl_term(qm, qv, pm, pv);
        let h = 1e-6;
        let f = |a: f64, b: f64, c: f64, d: f64| kl_term(a, b, c, d).value;
        let fd = |i: usize| {
            let mut hi = [qm, qv, pm, pv];
            let mut lo = hi;
            hi[i] += h;
            lo[i] -= h;
            (f(hi[0], hi[1], hi[2], hi[3]) - f(lo[0], lo[1], lo[2], lo[3])) / (2.0 * h)
        };
        for (i, a) in [t.d_q_mean, t.d_q_log_var, t.d_p_mean, t.d_p_log_var]
            .into_iter()
            .enumerate()
        {
            assert!((a - fd(i)).abs() < 1e-8, "partial {i}");
        }
    }

    #[test]
    fn clamped_variance_sample_collapses_to_mean() {
        let gp = GaussianParams::<f64>::from_head_row(&[0.7, -1e6]);
        assert_eq!(gp.log_var[0], LOG_VAR_MIN);
        let near = GaussianParams::<f64>::from_head_row(&[0.0, -40.0]).log_var[0];
        assert!(near > LOG_VAR_MIN && near < LOG_VAR_MIN + 0.01);
        let mut rng = SeedStream::new(0).rng("eps", 0);
        for _ in 0..100 {
            let s = reparam_sample(&gp, &mut rng)[0];
            assert!((s - 0.7).abs() < (-5.0f64).exp() * 6.0);
        }
    }

    #[test]
    fn sample_gradient_wrt_mean_is_one() {
        let lv = Mat::from_vec(1, 2, vec![0.3, -1.0]);
        let eps = Mat::from_vec(1, 2, vec![1.5, -0.2]);
        let d = reparam_rows_backward(&lv, &eps, &Mat::from_vec(1, 2, vec![1.0, 1.0]));
        assert_eq!(&d.row(0)[..2], &[1.0, 1.0]);
        assert!((d.row(0)[2] - 0.5 * (0.15f64).exp() * 1.5).abs() < 1e-15);
    }

    #[test]
    fn sample_mean_converges() {
        let gp = g(&[1.5, -0.5], &[0.4, -1.2]);
        let mut rng = SeedStream::new(1).rng("eps", 0);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let s = reparam_sample(&gp, &mut rng);
            sums[0] += s[0];
            sums[1] += s[1];
        }
        for j in 0..2 {
            let se = (gp.log_var[j] * 0.5).exp() / (n as f64).sqrt();
            assert!((sums[j] / n as f64 - gp.mean[j]).abs() < 3.0 * se);
        }
    }
}
