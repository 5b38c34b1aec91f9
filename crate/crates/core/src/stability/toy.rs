//! Toy loss families with analytic Lipschitz, smoothness and gradient-gap
//! constants, all losses bounded in `[0, 1]` on the clipped domain.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix_seed_index, stream, Rng as ChaRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `f(w; z) = ½β‖w − z‖²`.
    Quadratic,
    /// `f(w; x, y) = log(1 + exp(−y⟨w, x⟩)) / log(1 + e^R)`.
    Logistic,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Quadratic => "quadratic",
            Family::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub family: Family,
    pub dim: usize,
    pub n_end: usize,
    pub n_aux: usize,
    /// Radius of the parameter domain; iterates are projected onto it.
    pub radius: f64,
    /// Quadratic curvature.
    pub beta: f64,
    /// Quadratic: radius of the ball the end-task centres are drawn from.
    pub spread: f64,
    /// Quadratic: the gradient gap Δ between the mean losses, realized by
    /// offsetting auxiliary centres by `Δ/β` along the first axis.
    /// Logistic: rotation in radians of the auxiliary separator.
    pub aux_shift: f64,
    /// Logistic: probability of flipping a label.
    pub label_noise: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            family: Family::Quadratic,
            dim: 4,
            n_end: 100,
            n_aux: 100,
            radius: 0.5,
            beta: 2.0,
            spread: 0.1,
            aux_shift: 0.0,
            label_noise: 0.1,
        }
    }
}

/// One example. Quadratic examples use `x` as the centre and ignore `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConstants {
    pub lipschitz: f64,
    pub beta_e: f64,
    pub beta_a: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub spec: ToySpec,
    pub end: Vec<Example>,
    pub aux: Vec<Example>,
    pub constants: ToyConstants,
    separator: Vec<f64>,
    scale: f64,
}

/// Uniform draw from the `dim`-ball of the given radius.
pub fn ball_point<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&g);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    if n > 0.0 {
        g.iter_mut().for_each(|v| *v *= r / n);
    }
    g
}

pub fn ball_points<R: Rng + ?Sized>(dim: usize, radius: f64, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| ball_point(dim, radius, rng)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be ≥ 1".into()));
        }
        if self.n_end == 0 {
            return Err(Error::Config("n_end must be ≥ 1".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Config(format!("radius must be > 0, got {}", self.radius)));
        }
        match self.family {
            Family::Quadratic => {
                if !(self.beta > 0.0) || !(self.spread >= 0.0) || !(self.aux_shift >= 0.0) {
                    return Err(Error::Config("quadratic toy needs beta > 0, spread ≥ 0 and aux_shift ≥ 0".into()));
                }
                if self.aux_shift / self.beta + self.spread > self.radius * (1.0 + 1e-12) {
                    return Err(Error::Config(format!(
                        "auxiliary centres leave the domain: aux_shift/beta + spread = {} > radius = {}",
                        self.aux_shift / self.beta + self.spread,
                        self.radius
                    )));
                }
                if 2.0 * self.beta * self.radius * self.radius > 1.0 + 1e-12 {
                    return Err(Error::Config("quadratic loss exceeds 1 on the domain: need 2·beta·radius² ≤ 1".into()));
                }
            }
            Family::Logistic => {
                if !(0.0..0.5).contains(&self.label_noise) || !self.aux_shift.is_finite() {
                    return Err(Error::Config("logistic toy needs label_noise in [0, 0.5) and a finite aux_shift".into()));
                }
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> ToyConstants {
        match self.family {
            Family::Quadratic => ToyConstants {
                lipschitz: 2.0 * self.radius * self.beta,
                beta_e: self.beta,
                beta_a: self.beta,
                delta: self.aux_shift,
            },
            Family::Logistic => {
                let s = softplus(self.radius);
                ToyConstants {
                    lipschitz: 1.0 / s,
                    beta_e: 0.25 / s,
                    beta_a: 0.25 / s,
                    delta: 2.0 / s,
                }
            }
        }
    }
}

impl ToyProblem {
    /// Draws both sample sets. The same seed yields the same underlying draws
    /// for every `aux_shift`.
    pub fn generate(spec: &ToySpec, seed: u64) -> Result<ToyProblem> {
        spec.validate()?;
        let mut rng = stream(seed, Stream::Stability);
        let d = spec.dim;
        let mut separator = vec![0.0; d];
        separator[0] = 1.0;
        let mut problem = ToyProblem {
            spec: spec.clone(),
            end: Vec::new(),
            aux: Vec::new(),
            constants: spec.constants(),
            separator,
            scale: softplus(spec.radius),
        };
        problem.end = (0..spec.n_end).map(|_| problem.fresh_end(&mut rng)).collect();
        problem.aux = (0..spec.n_aux).map(|_| problem.fresh_aux(&mut rng)).collect();
        Ok(problem)
    }

    fn labeled<R: Rng + ?Sized>(&self, normal: &[f64], rng: &mut R) -> Example {
        let x = ball_point(self.spec.dim, 1.0, rng);
        let flip = rng.random::<f64>() < self.spec.label_noise;
        let y = if (dot(&x, normal) >= 0.0) != flip { 1.0 } else { -1.0 };
        Example { x, y }
    }

    /// A fresh draw from the end-task distribution.
    pub fn fresh_end<R: Rng + ?Sized>(&self, rng: &mut R) -> Example {
        match self.spec.family {
            Family::Quadratic => Example { x: ball_point(self.spec.dim, self.spec.spread, rng), y: 0.0 },
            Family::Logistic => self.labeled(&self.separator, rng),
        }
    }

    fn fresh_aux<R: Rng + ?Sized>(&self, rng: &mut R) -> Example {
        match self.spec.family {
            Family::Quadratic => {
                let mut x = ball_point(self.spec.dim, self.spec.spread, rng);
                x[0] += self.spec.aux_shift / self.spec.beta;
                Example { x, y: 0.0 }
            }
            Family::Logistic => {
                let mut normal = vec![0.0; self.spec.dim];
                normal[0] = self.spec.aux_shift.cos();
                if self.spec.dim > 1 {
                    normal[1] = self.spec.aux_shift.sin();
                }
                self.labeled(&normal, rng)
            }
        }
    }

    /// Held-out end-task points for the supremum over `z`.
    pub fn eval_points(&self, count: usize, seed: u64) -> Vec<Example> {
        let mut rng = stream(seed, Stream::Eval);
        (0..count).map(|_| self.fresh_end(&mut rng)).collect()
    }

    pub fn loss(&self, w: &[f64], ex: &Example) -> f64 {
        match self.spec.family {
            Family::Quadratic => 0.5 * self.spec.beta * distance(w, &ex.x).powi(2),
            Family::Logistic => softplus(-ex.y * dot(w, &ex.x)) / self.scale,
        }
    }

    pub fn gradient(&self, w: &[f64], ex: &Example) -> Vec<f64> {
        match self.spec.family {
            Family::Quadratic => w.iter().zip(&ex.x).map(|(a, z)| self.spec.beta * (a - z)).collect(),
            Family::Logistic => {
                let g = -ex.y * sigmoid(-ex.y * dot(w, &ex.x)) / self.scale;
                ex.x.iter().map(|x| g * x).collect()
            }
        }
    }

    /// One projected SGD step.
    pub fn step(&self, w: &[f64], ex: &Example, alpha: f64) -> Vec<f64> {
        let g = self.gradient(w, ex);
        let mut next: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        let n = norm(&next);
        if n > self.spec.radius {
            let s = self.spec.radius / n;
            next.iter_mut().for_each(|v| *v *= s);
        }
        next
    }

    /// Gradient of the sample-mean loss over a set.
    pub fn mean_gradient(&self, w: &[f64], set: &[Example]) -> Vec<f64> {
        let mut acc = vec![0.0; w.len()];
        for ex in set {
            for (a, g) in acc.iter_mut().zip(self.gradient(w, ex)) {
                *a += g;
            }
        }
        let n = set.len().max(1) as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        acc
    }

    /// Gradient gap between the two sample-mean losses, maximized over
    /// `count` uniform draws from the domain.
    pub fn measure_delta(&self, count: usize, seed: u64) -> f64 {
        let mut rng: ChaRng = stream(mix_seed_index(seed, 1), Stream::Eval);
        let thetas = ball_points(self.spec.dim, self.spec.radius, count, &mut rng);
        measure_delta(|w| self.mean_gradient(w, &self.end), |w| self.mean_gradient(w, &self.aux), &thetas)
    }
}

/// `max_θ ‖∇f_a(θ) − ∇f_e(θ)‖` over the given points; an under-estimate of
/// the supremum.
pub fn measure_delta<Fe, Fa>(grad_e: Fe, grad_a: Fa, thetas: &[Vec<f64>]) -> f64
where
    Fe: Fn(&[f64]) -> Vec<f64>,
    Fa: Fn(&[f64]) -> Vec<f64>,
{
    thetas
        .iter()
        .map(|t| distance(&grad_e(t), &grad_a(t)))
        .fold(0.0, f64::max)
}

/// Neighbouring end-task set: `S` with one example replaced.
#[derive(Debug, Clone)]
pub struct NeighborPair {
    pub end_prime: Vec<Example>,
    /// Replaced index, `None` when the sets are forced identical.
    pub index: Option<usize>,
}

impl NeighborPair {
    pub fn identical(problem: &ToyProblem) -> Self {
        NeighborPair {
            end_prime: problem.end.clone(),
            index: None,
        }
    }
}

pub fn make_neighbor_pair<R: Rng + ?Sized>(problem: &ToyProblem, rng: &mut R) -> NeighborPair {
    let index = rng.random_range(0..problem.end.len());
    let mut end_prime = problem.end.clone();
    end_prime[index] = problem.fresh_end(rng);
    NeighborPair {
        end_prime,
        index: Some(index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_losses_stay_in_unit_interval() {
        let spec = ToySpec { aux_shift: 0.8, ..ToySpec::default() };
        let p = ToyProblem::generate(&spec, 1).unwrap();
        let mut rng = stream(2, Stream::Eval);
        for w in ball_points(4, spec.radius, 200, &mut rng) {
            for ex in p.end.iter().chain(&p.aux) {
                let f = p.loss(&w, ex);
                assert!((0.0..=1.0).contains(&f));
                assert!(norm(&p.gradient(&w, ex)) <= p.constants.lipschitz + 1e-12);
            }
        }
    }

    #[test]
    fn logistic_constants_hold_on_samples() {
        let spec = ToySpec { family: Family::Logistic, aux_shift: 0.7, ..ToySpec::default() };
        let p = ToyProblem::generate(&spec, 3).unwrap();
        let mut rng = stream(4, Stream::Eval);
        for w in ball_points(4, spec.radius, 100, &mut rng) {
            for ex in p.end.iter().chain(&p.aux) {
                assert!((0.0..=1.0).contains(&p.loss(&w, ex)));
                assert!(norm(&p.gradient(&w, ex)) <= p.constants.lipschitz + 1e-12);
            }
        }
    }

    #[test]
    fn out_of_domain_centres_rejected() {
        let spec = ToySpec { aux_shift: 1.0, ..ToySpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn shared_draws_across_shift() {
        let a = ToyProblem::generate(&ToySpec::default(), 9).unwrap();
        let b = ToyProblem::generate(&ToySpec { aux_shift: 0.4, ..ToySpec::default() }, 9).unwrap();
        assert_eq!(a.end, b.end);
        for (x, y) in a.aux.iter().zip(&b.aux) {
            assert!((y.x[0] - x.x[0] - 0.2).abs() < 1e-15);
            assert_eq!(x.x[1..], y.x[1..]);
        }
    }

    #[test]
    fn identical_gradients_give_zero_gap() {
        let p = ToyProblem::generate(&ToySpec::default(), 0).unwrap();
        let thetas = ball_points(4, 0.5, 10, &mut stream(0, Stream::Eval));
        let g = |w: &[f64]| p.mean_gradient(w, &p.end);
        assert_eq!(measure_delta(g, g, &thetas), 0.0);
    }

    #[test]
    fn linear_gap_is_constant() {
        let a = [0.3, -0.1];
        let b = [0.0, 0.3];
        let thetas = ball_points(2, 1.0, 5, &mut stream(0, Stream::Eval));
        let d = measure_delta(|_| a.to_vec(), |_| b.to_vec(), &thetas);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_example_is_replaced() {
        let spec = ToySpec { n_end: 1, ..ToySpec::default() };
        let p = ToyProblem::generate(&spec, 0).unwrap();
        let nb = make_neighbor_pair(&p, &mut stream(5, Stream::Stability));
        assert_eq!(nb.index, Some(0));
        assert_ne!(nb.end_prime[0], p.end[0]);
    }
}
