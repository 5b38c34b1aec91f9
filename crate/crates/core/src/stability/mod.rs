//! Numerical checks of uniform stability for SGM with dynamic task sampling.

mod audit;
mod bounds;
mod sgm;
mod sweep;
mod toy;

pub use audit::{audit_all, divergent_rhs, growth_recursion_audit, same_sample_rhs, AuditReport, Violation};
pub use bounds::{
    rho_dominant_rate, hardt_bound, lambda_for_gamma, pair_constants, theorem_bound, theorem_bound_pair, BoundEval, BoundPair,
    StabilityConfig,
};
pub use sgm::{empirical_stability, run_coupled, run_pairs, run_sgm_pair, EmpiricalStability, SampleChoice, Task, TrajectoryPair};
pub use sweep::{read_sweep_csv, run_sweep, write_sweep_csv, SweepGrid, SweepRow, CSV_HEADER};
pub use toy::{
    ball_point, ball_points, distance, make_neighbor_pair, measure_delta, norm, Example, Family, NeighborPair, ToyConstants,
    ToyProblem, ToySpec,
};
