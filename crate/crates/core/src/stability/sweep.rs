//! Grid sweep over `(shift, λ_e, T)` emitting one CSV row per point.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bounds::{theorem_bound, StabilityConfig};
use super::sgm::{empirical_stability, run_pairs};
use super::toy::{ToyProblem, ToySpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub toy: ToySpec,
    pub c: f64,
    /// Values for `toy.aux_shift`.
    pub shifts: Vec<f64>,
    pub lambda_es: Vec<f64>,
    pub steps: Vec<usize>,
    /// Seed pairs per point.
    pub seeds: usize,
    pub eval_points: usize,
    /// Domain draws used to estimate Δ.
    pub delta_probes: usize,
    pub seed: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            toy: ToySpec::default(),
            c: 0.5,
            shifts: vec![0.0, 0.4, 0.8],
            lambda_es: vec![0.25, 0.5, 0.75],
            steps: vec![50, 100, 200],
            seeds: 100,
            eval_points: 256,
            delta_probes: 64,
            seed: 0,
        }
    }
}

pub const CSV_HEADER: [&str; 17] = [
    "family", "c", "T", "N_e", "N_a", "lambda_e", "L", "beta_e", "beta_a", "delta", "eps_hat", "eps_se", "bound", "pair",
    "gap", "delta_hat", "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub c: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N_e")]
    pub n_end: usize,
    #[serde(rename = "N_a")]
    pub n_aux: usize,
    pub lambda_e: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub beta_e: f64,
    pub beta_a: f64,
    pub delta: f64,
    pub eps_hat: Option<f64>,
    pub eps_se: Option<f64>,
    pub bound: Option<f64>,
    pub pair: Option<u8>,
    /// `bound − eps_hat`.
    pub gap: Option<f64>,
    pub delta_hat: Option<f64>,
    pub error: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

fn run_point(grid: &SweepGrid, shift: f64, lambda_e: f64, steps: usize) -> (StabilityConfig, Result<(f64, f64, f64, u8, f64)>) {
    let spec = ToySpec { aux_shift: shift, ..grid.toy.clone() };
    let constants = spec.constants();
    let cfg = StabilityConfig {
        c: grid.c,
        steps,
        n_end: spec.n_end,
        n_aux: spec.n_aux,
        lambda_e,
        lipschitz: constants.lipschitz,
        beta_e: constants.beta_e,
        beta_a: constants.beta_a,
        delta: constants.delta,
        seeds: grid.seeds,
    };
    let result = (|| {
        let problem = ToyProblem::generate(&spec, grid.seed)?;
        let bound = theorem_bound(&cfg)?;
        let pairs = run_pairs(&problem, &cfg, grid.seed)?;
        let eval = problem.eval_points(grid.eval_points, grid.seed);
        let est = empirical_stability(&problem, &pairs, &eval)?;
        let delta_hat = problem.measure_delta(grid.delta_probes, grid.seed);
        Ok((est.eps_hat, est.se, bound.value, bound.pair.number(), delta_hat))
    })();
    (cfg, result)
}

/// Runs every grid point in `shift`, `λ_e`, `T` order. A failing point
/// yields a row carrying its error message.
pub fn run_sweep(grid: &SweepGrid) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &shift in &grid.shifts {
        for &lambda_e in &grid.lambda_es {
            for &steps in &grid.steps {
                let (cfg, result) = run_point(grid, shift, lambda_e, steps);
                let mut row = SweepRow {
                    family: grid.toy.family.to_string(),
                    c: cfg.c,
                    steps,
                    n_end: cfg.n_end,
                    n_aux: cfg.n_aux,
                    lambda_e,
                    lipschitz: cfg.lipschitz,
                    beta_e: cfg.beta_e,
                    beta_a: cfg.beta_a,
                    delta: cfg.delta,
                    eps_hat: None,
                    eps_se: None,
                    bound: None,
                    pair: None,
                    gap: None,
                    delta_hat: None,
                    error: String::new(),
                };
                match result {
                    Ok((eps, se, bound, pair, dh)) => {
                        row.eps_hat = Some(eps);
                        row.eps_se = Some(se);
                        row.bound = Some(bound);
                        row.pair = Some(pair);
                        row.gap = Some(bound - eps);
                        row.delta_hat = Some(dh);
                    }
                    Err(e) => {
                        log::warn!("stability point shift={shift} lambda_e={lambda_e} T={steps} failed: {e}");
                        row.error = e.to_string();
                    }
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Writes the header and every row; an empty slice yields the header only.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
