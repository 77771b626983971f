use serde::{Deserialize, Serialize};

use super::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    cfg: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: usize,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, params: &mut [Param<S>], grads: &[Vec<S>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.tensor.shape().len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let f = S::from_f64_lossy;
        let (b1, b2) = (f(self.cfg.beta1), f(self.cfg.beta2));
        let lr = f(self.cfg.learning_rate);
        let eps = f(self.cfg.epsilon);
        let bc1 = S::one() - b1.powi(self.t as i32);
        let bc2 = S::one() - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.tensor.value_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
