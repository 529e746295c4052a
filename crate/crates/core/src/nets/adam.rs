use super::layers::NamedParamsMut;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Adaptive-moment optimiser over a fixed, ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Rescale the whole gradient to at most this L2 norm before each step.
    pub max_grad_norm: Option<f64>,
    /// Global gradient norm seen by the latest step, before clipping.
    pub last_grad_norm: f64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            max_grad_norm: None,
            last_grad_norm: 0.0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Descends along the accumulated gradients, which are left untouched.
    pub fn update(&mut self, params: NamedParamsMut<'_, T>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|(_, p)| vec![T::zero(); p.len()])
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimiser tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let norm = params
            .iter()
            .flat_map(|(_, p)| p.grad.iter())
            .map(|g| g.f64().powi(2))
            .sum::<f64>()
            .sqrt();
        self.last_grad_norm = norm;
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => T::lit(max / norm),
            _ => T::one(),
        };
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step = T::lit(self.lr * bc2.sqrt() / bc1);
        let eps = T::lit(self.eps * bc2.sqrt());
        for ((_, p), (m, v)) in params.into_iter().zip(self.m.iter_mut().zip(&mut self.v)) {
            if m.len() != p.len() {
                return Err(Error::invalid(
                    "optimiser state does not match parameter size",
                ));
            }
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m).zip(v.iter_mut()) {
                let g = g * clip;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= step * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::layers::Param;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::<f64>::zeros(&[3]);
        p.grad = vec![2.0, -0.5, 1e-3];
        let mut adam = Adam::new(0.1);
        adam.update(vec![("p".into(), &mut p)]).unwrap();
        for (w, g) in p.value.iter().zip([2.0f64, -0.5, 1e-3]) {
            assert!((w + 0.1 * g.signum()).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn clipping_rescales_the_gradient_jointly() {
        let mut a = Param::<f64>::zeros(&[1]);
        let mut b = Param::<f64>::zeros(&[1]);
        a.grad = vec![30.0];
        b.grad = vec![40.0];
        let mut adam = Adam::new(0.1);
        adam.max_grad_norm = Some(5.0);
        adam.update(vec![("a".into(), &mut a), ("b".into(), &mut b)])
            .unwrap();
        assert_eq!(adam.last_grad_norm, 50.0);
        assert!((adam.m[0][0] - 0.1 * 3.0).abs() < 1e-12);
        assert!((adam.m[1][0] - 0.1 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::<f64>::zeros(&[2]);
        let target = [1.5, -2.0];
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            p.grad = p
                .value
                .iter()
                .zip(target)
                .map(|(w, t)| 2.0 * (w - t))
                .collect();
            adam.update(vec![("p".into(), &mut p)]).unwrap();
        }
        assert!((p.value[0] - 1.5).abs() < 1e-3 && (p.value[1] + 2.0).abs() < 1e-3);
    }
}
