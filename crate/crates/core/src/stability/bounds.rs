//! Closed-form stability bounds for SGM under dynamic task sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of one stability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Step-size constant, `α_t = c / t`.
    pub c: f64,
    pub steps: usize,
    pub n_end: usize,
    pub n_aux: usize,
    pub lambda_e: f64,
    pub lipschitz: f64,
    pub beta_e: f64,
    pub beta_a: f64,
    pub delta: f64,
    pub seeds: usize,
}

impl StabilityConfig {
    pub fn lambda_a(&self) -> f64 {
        1.0 - self.lambda_e
    }

    /// `N′ = N_e + N_a`.
    pub fn n_total(&self) -> f64 {
        (self.n_end + self.n_aux) as f64
    }

    /// `r_e = N_e / N′`.
    pub fn r_e(&self) -> f64 {
        self.n_end as f64 / self.n_total()
    }

    /// `γ = λ_e / r_e`.
    pub fn gamma(&self) -> f64 {
        self.lambda_e / self.r_e()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_e) {
            return Err(Error::Config(format!("lambda_e must lie in [0, 1], got {}", self.lambda_e)));
        }
        for (name, v) in [("c", self.c), ("lipschitz", self.lipschitz), ("beta_e", self.beta_e), ("beta_a", self.beta_a)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be ≥ 0, got {}", self.delta)));
        }
        if self.n_end == 0 {
            return Err(Error::Config("n_end must be ≥ 1".into()));
        }
        if self.n_aux == 0 && self.lambda_e < 1.0 {
            return Err(Error::Config("n_aux = 0 requires lambda_e = 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be ≥ 1".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be ≥ 1".into()));
        }
        Ok(())
    }

    /// `(λ*, β*)`: the smaller smoothness and its sampling weight, ties going
    /// to the end-task.
    pub fn smoother(&self) -> (f64, f64) {
        if self.beta_e <= self.beta_a {
            (self.lambda_e, self.beta_e)
        } else {
            (self.lambda_a(), self.beta_a)
        }
    }

    /// The other function's `(λ, β)`.
    pub fn rougher(&self) -> (f64, f64) {
        if self.beta_e <= self.beta_a {
            (self.lambda_a(), self.beta_a)
        } else {
            (self.lambda_e, self.beta_e)
        }
    }
}

/// `λ_e` that holds `γ` fixed at the given sample counts.
pub fn lambda_for_gamma(gamma: f64, n_end: usize, n_aux: usize) -> f64 {
    gamma * n_end as f64 / (n_end + n_aux) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundPair {
    /// `(λ*β*, (1−λ*)(Δ+2L))`
    One,
    /// `(λ_eβ_e + λ_aβ_a, 0)`
    Two,
}

impl BoundPair {
    pub fn number(self) -> u8 {
        match self {
            BoundPair::One => 1,
            BoundPair::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEval {
    pub value: f64,
    pub pair: BoundPair,
    pub pair1: f64,
    pub pair2: f64,
}

/// `(β̄, ρ)` for the given pair.
pub fn pair_constants(cfg: &StabilityConfig, pair: BoundPair) -> (f64, f64) {
    match pair {
        BoundPair::One => {
            let (ls, bs) = cfg.smoother();
            (ls * bs, (1.0 - ls) * (cfg.delta + 2.0 * cfg.lipschitz))
        }
        BoundPair::Two => (cfg.lambda_e * cfg.beta_e + cfg.lambda_a() * cfg.beta_a, 0.0),
    }
}

fn check_gamma(cfg: &StabilityConfig) -> Result<()> {
    cfg.validate()?;
    let (gamma, n) = (cfg.gamma(), cfg.n_total());
    if gamma >= n {
        return Err(Error::Config(format!("gamma = {gamma} must be < N' = {n}")));
    }
    Ok(())
}

fn formula(cfg: &StabilityConfig, beta_bar: f64, rho: f64) -> f64 {
    let (c, l, t) = (cfg.c, cfg.lipschitz, cfg.steps as f64);
    let (gamma, n) = (cfg.gamma(), cfg.n_total());
    let q = c * beta_bar;
    if q <= 0.0 {
        return f64::INFINITY;
    }
    let inner = 2.0 * gamma * l * l * c / (n - gamma) + rho * l * c;
    (1.0 + 1.0 / q) * inner.powf(1.0 / (q + 1.0)) * (gamma * t / n).powf(q / (1.0 + q))
}

/// The bound evaluated at one fixed pair.
pub fn theorem_bound_pair(cfg: &StabilityConfig, pair: BoundPair) -> Result<f64> {
    check_gamma(cfg)?;
    let (beta_bar, rho) = pair_constants(cfg, pair);
    Ok(formula(cfg, beta_bar, rho))
}

/// Minimum of the bound over both pairs. Ties go to pair 2.
pub fn theorem_bound(cfg: &StabilityConfig) -> Result<BoundEval> {
    let pair1 = theorem_bound_pair(cfg, BoundPair::One)?;
    let pair2 = theorem_bound_pair(cfg, BoundPair::Two)?;
    let (value, pair) = if pair1 < pair2 { (pair1, BoundPair::One) } else { (pair2, BoundPair::Two) };
    Ok(BoundEval { value, pair, pair1, pair2 })
}

/// Single-task SGM bound with `q = β_e c`.
pub fn hardt_bound(cfg: &StabilityConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.lambda_e != 1.0 || cfg.n_aux != 0 {
        return Err(Error::Config("hardt_bound needs lambda_e = 1 and n_aux = 0".into()));
    }
    if cfg.n_end <= 1 {
        return Err(Error::Config(format!("hardt_bound needs n_end > 1, got {}", cfg.n_end)));
    }
    let q = cfg.beta_e * cfg.c;
    let l = cfg.lipschitz;
    Ok((1.0 + 1.0 / q) / (cfg.n_end as f64 - 1.0)
        * (2.0 * cfg.c * l * l).powf(1.0 / (q + 1.0))
        * (cfg.steps as f64).powf(q / (q + 1.0)))
}

/// Constant-free form of the pair-1 bound.
pub fn rho_dominant_rate(cfg: &StabilityConfig) -> Result<f64> {
    check_gamma(cfg)?;
    let (ls, bs) = cfg.smoother();
    let k = cfg.c * ls * bs;
    let x = cfg.gamma() * cfg.steps as f64 / cfg.n_total();
    Ok(cfg.delta.powf(1.0 / (1.0 + k)) * x.powf(1.0 - 1.0 / (k + 1.0)))
}
