use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Moment slots grow as parameters are
/// appended to the set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    steps: Vec<u32>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn grow(&mut self, params: &ParamSet) {
        for t in &params.tensors()[self.m.len()..] {
            self.m.push(Array2::zeros(t.value.dim()));
            self.v.push(Array2::zeros(t.value.dim()));
            self.steps.push(0);
        }
    }

    /// One update of the listed parameters.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, ids: &[ParamId]) {
        self.grow(params);
        let c = self.config;
        for &id in ids {
            if id >= grads.len() {
                continue;
            }
            self.steps[id] += 1;
            let t = self.steps[id] as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let g = grads.get(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let w = params.value_mut(id);
            ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                *w -= c.lr * (update + c.weight_decay * *w);
            });
        }
    }
}
