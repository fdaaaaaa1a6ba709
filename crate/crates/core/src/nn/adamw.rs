//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, TapeBinding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer state lives here, not in the checkpoint: training runs are
/// single-shot and restarts re-warm the moments.
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Array2<f64>, Array2<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update at learning rate `lr`, reading gradients from the
    /// last `tape.backward` call. Parameters the loss never touched get a
    /// zero gradient: their moments decay and weight decay still applies.
    pub fn step(&mut self, params: &mut ParamSet, tape: &Tape, binding: &TapeBinding, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for (name, var) in binding.iter() {
            let shape = params.get(name).dim();
            let zero = Array2::zeros(shape);
            let grad = tape.grad(var).unwrap_or(&zero);
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(shape), Array2::zeros(shape)));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
            });
            let value = params.get_mut(name);
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *p);
                });
        }
    }
}
