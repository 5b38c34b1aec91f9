use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective_space::{ObjectiveSpace, Stage, StagePrimitive};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Learnable scoring state: one term per objective plus one per stage
/// primitive, and the end-task mixing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorWeights {
    pub w_all: Vec<f64>,
    pub stage: BTreeMap<StagePrimitive, f64>,
    pub lambda_param: f64,
}

fn stage_letter(s: Stage) -> &'static str {
    match s {
        Stage::Data => "D",
        Stage::Transform => "T",
        Stage::Representation => "R",
        Stage::Output => "O",
    }
}

/// `D=EndTaskData`, `T=BertOp`, ...
pub fn primitive_key(p: StagePrimitive) -> String {
    format!("{}={}", stage_letter(p.stage()), p.name())
}

impl FactorWeights {
    /// All factors zero, so sampled objectives start uniformly weighted.
    pub fn new(space: &ObjectiveSpace, lambda_init: f64) -> Result<Self> {
        if !(lambda_init > 0.0 && lambda_init < 1.0) {
            return Err(Error::OutOfRange(format!(
                "lambda_init must lie strictly between 0 and 1, got {lambda_init}"
            )));
        }
        Ok(FactorWeights {
            w_all: vec![0.0; space.len()],
            stage: space.stage_sets.primitives().into_iter().map(|p| (p, 0.0)).collect(),
            lambda_param: logit(lambda_init),
        })
    }

    pub fn lambda_e(&self) -> f64 {
        sigmoid(self.lambda_param)
    }

    pub fn factor(&self, p: StagePrimitive) -> f64 {
        self.stage.get(&p).copied().unwrap_or(0.0)
    }

    pub fn score(&self, space: &ObjectiveSpace, id: usize) -> f64 {
        let desc = &space.descriptors[id];
        self.w_all[id] + desc.primitives().iter().map(|&p| self.factor(p)).sum::<f64>()
    }

    /// Softmax of scores restricted to `ids`.
    pub fn compute_weights(&self, space: &ObjectiveSpace, ids: &[usize]) -> Vec<f64> {
        let scores: Vec<f64> = ids.iter().map(|&k| self.score(space, k)).collect();
        softmax(&scores)
    }

    /// Softmax over the whole space, for reporting.
    pub fn space_weights(&self, space: &ObjectiveSpace) -> Vec<f64> {
        let ids: Vec<usize> = (0..space.len()).collect();
        self.compute_weights(space, &ids)
    }

    /// Chain rule through the in-batch softmax, then one descent step of size
    /// `aux_lr` on every factor entry of each sampled objective. Returns the
    /// score-space gradient per sampled objective.
    pub fn update_factors(
        &mut self,
        space: &ObjectiveSpace,
        ids: &[usize],
        weights: &[f64],
        g_w: &[f64],
        aux_lr: f64,
    ) -> Result<Vec<f64>> {
        if weights.len() != ids.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                got: weights.len(),
            });
        }
        if g_w.len() != ids.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                got: g_w.len(),
            });
        }
        let n = ids.len();
        let gs: Vec<f64> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| {
                        let delta = if k == j { 1.0 } else { 0.0 };
                        g_w[k] * weights[k] * (delta - weights[j])
                    })
                    .sum()
            })
            .collect();
        for (&id, &g) in ids.iter().zip(&gs) {
            self.w_all[id] -= aux_lr * g;
            for p in space.descriptors[id].primitives() {
                *self.stage.entry(p).or_insert(0.0) -= aux_lr * g;
            }
        }
        Ok(gs)
    }

    /// `lambda_param -= sopt_lr · g_lambda · σ'(lambda_param)`.
    pub fn update_lambda(&mut self, g_lambda: f64, sopt_lr: f64) {
        let s = self.lambda_e();
        self.lambda_param -= sopt_lr * g_lambda * s * (1.0 - s);
    }

    pub fn snapshot(&self) -> FactorSnapshot {
        FactorSnapshot {
            w_all: self.w_all.clone(),
            primitives: self.stage.iter().map(|(&p, &v)| (primitive_key(p), v)).collect(),
            lambda_param: self.lambda_param,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSnapshot {
    pub w_all: Vec<f64>,
    pub primitives: BTreeMap<String, f64>,
    pub lambda_param: f64,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// `n` distinct ids drawn uniformly from `0..space_len`, ascending.
pub fn sample_objectives<R: Rng + ?Sized>(space_len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > space_len {
        return Err(Error::OutOfRange(format!(
            "cannot sample {n} objectives from a space of {space_len}"
        )));
    }
    let mut ids = rand::seq::index::sample(rng, space_len, n).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `λ_e · L_E + (1 − λ_e) · Σ_k w_k L_k`.
pub fn total_loss(lambda_e: f64, end_task_loss: f64, aux_losses: &[f64], weights: &[f64]) -> f64 {
    let aux: f64 = aux_losses.iter().zip(weights).map(|(l, w)| l * w).sum();
    lambda_e * end_task_loss + (1.0 - lambda_e) * aux
}
