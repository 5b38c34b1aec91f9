//! Coupled SGM runs on neighbouring datasets and the empirical stability
//! estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::StabilityConfig;
use super::toy::{distance, make_neighbor_pair, Example, NeighborPair, ToyProblem};
use crate::error::{Error, Result};
use crate::rng::{mix_seed_index, stream, Rng as ChaRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    End,
    Aux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleChoice {
    pub task: Task,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    /// `w_0 ..= w_T` on `S`.
    pub w: Vec<Vec<f64>>,
    /// `w′_0 ..= w′_T` on `S′`.
    pub w_prime: Vec<Vec<f64>>,
    /// `δ_t = ‖w_t − w′_t‖`, length `T + 1`.
    pub delta: Vec<f64>,
    /// Choice used to move from step `t` to `t + 1`.
    pub choices: Vec<SampleChoice>,
    pub alpha: Vec<f64>,
    pub differing: Option<usize>,
}

impl TrajectoryPair {
    /// Whether the two runs saw different examples at transition `t`.
    pub fn divergent(&self, t: usize) -> bool {
        let ch = self.choices[t];
        ch.task == Task::End && Some(ch.index) == self.differing
    }

    pub fn first_divergence(&self) -> Option<usize> {
        (0..self.choices.len()).find(|&t| self.divergent(t))
    }

    pub fn final_delta(&self) -> f64 {
        *self.delta.last().expect("trajectory has w_0")
    }
}

impl StabilityConfig {
    pub fn for_problem(problem: &ToyProblem, c: f64, steps: usize, lambda_e: f64, seeds: usize) -> StabilityConfig {
        let k = problem.constants;
        StabilityConfig {
            c,
            steps,
            n_end: problem.end.len(),
            n_aux: problem.aux.len(),
            lambda_e,
            lipschitz: k.lipschitz,
            beta_e: k.beta_e,
            beta_a: k.beta_a,
            delta: k.delta,
            seeds,
        }
    }
}

/// Per-step task choice and example index, shared by both runs.
fn draw_choice<R: Rng + ?Sized>(cfg: &StabilityConfig, n_end: usize, n_aux: usize, rng: &mut R) -> SampleChoice {
    let end = rng.random::<f64>() < cfg.lambda_e;
    if end {
        SampleChoice { task: Task::End, index: rng.random_range(0..n_end) }
    } else {
        SampleChoice { task: Task::Aux, index: rng.random_range(0..n_aux) }
    }
}

/// Runs SGM on `S` and `S′` with one shared random stream.
pub fn run_coupled(problem: &ToyProblem, neighbor: &NeighborPair, cfg: &StabilityConfig, rng: &mut ChaRng) -> Result<TrajectoryPair> {
    cfg.validate()?;
    if cfg.n_end != problem.end.len() || cfg.n_aux != problem.aux.len() || neighbor.end_prime.len() != problem.end.len() {
        return Err(Error::Config("stability config sample counts do not match the problem".into()));
    }
    let dim = problem.spec.dim;
    let mut w = vec![vec![0.0; dim]];
    let mut wp = vec![vec![0.0; dim]];
    let mut delta = vec![0.0];
    let mut choices = Vec::with_capacity(cfg.steps);
    let mut alpha = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let ch = draw_choice(cfg, cfg.n_end, cfg.n_aux, rng);
        let a = cfg.c / t as f64;
        let (ex, exp): (&Example, &Example) = match ch.task {
            Task::End => (&problem.end[ch.index], &neighbor.end_prime[ch.index]),
            Task::Aux => (&problem.aux[ch.index], &problem.aux[ch.index]),
        };
        let next = problem.step(&w[t - 1], ex, a);
        let next_p = problem.step(&wp[t - 1], exp, a);
        if next.iter().chain(&next_p).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
        delta.push(distance(&next, &next_p));
        w.push(next);
        wp.push(next_p);
        choices.push(ch);
        alpha.push(a);
    }
    Ok(TrajectoryPair {
        w,
        w_prime: wp,
        delta,
        choices,
        alpha,
        differing: neighbor.index,
    })
}

/// Draws a neighbouring set, then runs the coupled pair, all from `seed`.
pub fn run_sgm_pair(problem: &ToyProblem, cfg: &StabilityConfig, seed: u64) -> Result<TrajectoryPair> {
    let mut rng = stream(seed, Stream::Stability);
    let neighbor = make_neighbor_pair(problem, &mut rng);
    run_coupled(problem, &neighbor, cfg, &mut rng)
}

/// `cfg.seeds` independent pairs; pair `k` uses `mix_seed_index(base_seed, k)`.
pub fn run_pairs(problem: &ToyProblem, cfg: &StabilityConfig, base_seed: u64) -> Result<Vec<TrajectoryPair>> {
    (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|k| run_sgm_pair(problem, cfg, mix_seed_index(base_seed, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalStability {
    /// `max_z mean |f_e(w_T; z) − f_e(w′_T; z)|`.
    pub eps_hat: f64,
    /// Standard error of the mean at the maximizing `z`.
    pub se: f64,
    pub argmax: usize,
    pub mean_final_delta: f64,
    pub pairs: usize,
}

pub fn empirical_stability(problem: &ToyProblem, pairs: &[TrajectoryPair], eval: &[Example]) -> Result<EmpiricalStability> {
    if pairs.is_empty() || eval.is_empty() {
        return Err(Error::InvalidInput("empirical stability needs at least one pair and one evaluation point".into()));
    }
    let n = pairs.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0);
    for (i, z) in eval.iter().enumerate() {
        let diffs: Vec<f64> = pairs
            .iter()
            .map(|p| (problem.loss(p.w.last().unwrap(), z) - problem.loss(p.w_prime.last().unwrap(), z)).abs())
            .collect();
        let mean = diffs.iter().sum::<f64>() / n;
        if mean > best.0 {
            let se = if pairs.len() > 1 {
                let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            best = (mean, se, i);
        }
    }
    Ok(EmpiricalStability {
        eps_hat: best.0,
        se: best.1,
        argmax: best.2,
        mean_final_delta: pairs.iter().map(TrajectoryPair::final_delta).sum::<f64>() / n,
        pairs: pairs.len(),
    })
}
