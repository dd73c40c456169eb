use serde::{Deserialize, Serialize};

use crate::learn::{ParamStore, Real, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state: first/second moment accumulators and the step counter.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the accumulated gradients,
    /// then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        assert_eq!(store.len(), self.first.len(), "optimizer bound to another store");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let corr1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let corr2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));

        for ((p, m), v) in store
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grad();
    }
}
