//! Per-step audit of realized divergences against the growth recursion.

use serde::{Deserialize, Serialize};

use super::bounds::StabilityConfig;
use super::sgm::TrajectoryPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Transition index: `δ_t → δ_{t+1}`.
    pub step: usize,
    pub divergent: bool,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub divergent_steps: usize,
    pub violations: Vec<Violation>,
    /// Largest `lhs − rhs` seen, negative when every step had slack.
    pub max_excess: f64,
}

impl AuditReport {
    pub fn merge(&mut self, other: AuditReport) {
        if self.checked == 0 {
            self.max_excess = other.max_excess;
        } else if other.checked > 0 {
            self.max_excess = self.max_excess.max(other.max_excess);
        }
        self.checked += other.checked;
        self.divergent_steps += other.divergent_steps;
        self.violations.extend(other.violations);
    }
}

/// Right-hand side for a transition where both runs used the same example.
pub fn same_sample_rhs(cfg: &StabilityConfig, alpha: f64, delta: f64) -> f64 {
    let (l1, b1) = cfg.smoother();
    let (l2, b2) = cfg.rougher();
    let first = (1.0 + alpha * l1 * b1) * delta + alpha * l2 * (cfg.delta + 2.0 * cfg.lipschitz);
    let second = (1.0 + alpha * (l1 * b1 + l2 * b2)) * delta;
    first.min(second)
}

/// Right-hand side for a transition on the replaced example.
pub fn divergent_rhs(cfg: &StabilityConfig, alpha: f64, delta: f64) -> f64 {
    delta + 2.0 * alpha * cfg.lipschitz
}

pub fn growth_recursion_audit(pair: &TrajectoryPair, cfg: &StabilityConfig, tol: f64) -> AuditReport {
    let mut report = AuditReport { max_excess: f64::NEG_INFINITY, ..AuditReport::default() };
    for t in 0..pair.choices.len() {
        let divergent = pair.divergent(t);
        let (a, d) = (pair.alpha[t], pair.delta[t]);
        let rhs = if divergent { divergent_rhs(cfg, a, d) } else { same_sample_rhs(cfg, a, d) };
        let lhs = pair.delta[t + 1];
        report.checked += 1;
        report.divergent_steps += usize::from(divergent);
        report.max_excess = report.max_excess.max(lhs - rhs);
        if lhs > rhs + tol {
            report.violations.push(Violation { step: t, divergent, lhs, rhs });
        }
    }
    report
}

pub fn audit_all(pairs: &[TrajectoryPair], cfg: &StabilityConfig, tol: f64) -> AuditReport {
    let mut total = AuditReport::default();
    for p in pairs {
        total.merge(growth_recursion_audit(p, cfg, tol));
    }
    total
}
