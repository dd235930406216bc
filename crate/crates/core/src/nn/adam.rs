//! Adam optimizer over a [`ParamStore`].

use crate::scalar::Scalar;

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    config: AdamConfig,
    // first/second moment per parameter scalar, laid out like the store
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let m = store.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        let v = store.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        Adam { config, m, v, step: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently in the store.
    pub fn step(&mut self, store: &mut ParamStore<F>) {
        assert_eq!(self.m.len(), store.len(), "optimizer/store mismatch");
        self.step += 1;
        let lr = F::from_f64_c(self.config.learning_rate);
        let b1 = F::from_f64_c(self.config.beta1);
        let b2 = F::from_f64_c(self.config.beta2);
        let eps = F::from_f64_c(self.config.epsilon);
        let bc1 = F::one() - F::from_f64_c(self.config.beta1.powi(self.step as i32));
        let bc2 = F::one() - F::from_f64_c(self.config.beta2.powi(self.step as i32));
        for (i, pid) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = store.grad(pid).to_vec();
            let value = store.value_mut(pid);
            for j in 0..grad.len() {
                let g = grad[j];
                self.m[i][j] = b1 * self.m[i][j] + (F::one() - b1) * g;
                self.v[i][j] = b2 * self.v[i][j] + (F::one() - b2) * g * g;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                value[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Moment buffers, for checkpointing. Order matches `store.ids()`.
    pub fn state(&self) -> (&[Vec<F>], &[Vec<F>], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn restore(&mut self, m: Vec<Vec<F>>, v: Vec<Vec<F>>, step: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.step = step;
    }
}
