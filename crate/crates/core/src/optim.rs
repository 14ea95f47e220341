//! Adam without weight decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, one pair per parameter tensor in visitation order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Parameterized + ?Sized>(cfg: AdamConfig, model: &P) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .params()
            .iter()
            .map(|p| Array2::zeros(p.value.dim()))
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients currently stored in the
    /// model.
    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in model
            .params_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::array;

    struct Quadratic {
        p: Param,
    }

    impl Parameterized for Quadratic {
        fn params(&self) -> Vec<&Param> {
            vec![&self.p]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.p]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quadratic {
            p: Param::new(array![[1.0, -2.0]]),
        };
        q.p.grad = array![[0.5, -3.0]];
        let mut opt = Adam::new(AdamConfig::default(), &q);
        opt.step(&mut q);
        // m_hat = g, v_hat = g^2, so the step is lr * sign(g) up to eps.
        assert!((q.p.value[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((q.p.value[[0, 1]] - (-2.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quadratic {
            p: Param::new(array![[3.0, -4.0]]),
        };
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            &q,
        );
        for _ in 0..2000 {
            q.p.grad = &q.p.value * 2.0;
            opt.step(&mut q);
        }
        assert!(q.p.value.iter().all(|w| w.abs() < 1e-2));
        assert_eq!(opt.steps(), 2000);
    }
}
