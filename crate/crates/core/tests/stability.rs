use aang_core::rng::{stream, Stream};
use aang_core::stability::*;

fn quad(shift: f64) -> ToyProblem {
    ToyProblem::generate(&ToySpec { aux_shift: shift, ..ToySpec::default() }, 11).unwrap()
}

fn cfg_for(p: &ToyProblem, lambda_e: f64, steps: usize, seeds: usize) -> StabilityConfig {
    StabilityConfig::for_problem(p, 0.5, steps, lambda_e, seeds)
}

// Independent transcription of the dynamic-sampling bound.
fn oracle_bound(c: f64, t: f64, n_e: f64, n_a: f64, lam_e: f64, l: f64, bb: f64, rho: f64) -> f64 {
    let np = n_e + n_a;
    let g = lam_e * np / n_e;
    let cb = c * bb;
    let a = 1.0 + 1.0 / cb;
    let b = (2.0 * g * l.powi(2) * c / (np - g) + rho * l * c).powf(1.0 / (cb + 1.0));
    let d = (g * t / np).powf(cb / (1.0 + cb));
    a * b * d
}

fn oracle_single_task(c: f64, l: f64, beta: f64, n: f64, t: f64) -> f64 {
    let q = beta * c;
    let lead = (1.0 + 1.0 / q) / (n - 1.0);
    lead * (2.0 * c * l * l).powf(1.0 / (q + 1.0)) * t.powf(q / (q + 1.0))
}

fn unit() -> StabilityConfig {
    StabilityConfig {
        c: 1.0,
        steps: 100,
        n_end: 100,
        n_aux: 100,
        lambda_e: 0.5,
        lipschitz: 1.0,
        beta_e: 1.0,
        beta_a: 1.0,
        delta: 0.0,
        seeds: 1,
    }
}

#[test]
fn pair_two_matches_transcription() {
    let got = theorem_bound_pair(&unit(), BoundPair::Two).unwrap();
    let want = oracle_bound(1.0, 100.0, 100.0, 100.0, 0.5, 1.0, 1.0, 0.0);
    assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
}

#[test]
fn pair_one_matches_transcription() {
    let cfg = StabilityConfig { delta: 0.3, beta_a: 2.0, lambda_e: 0.4, ..unit() };
    let got = theorem_bound_pair(&cfg, BoundPair::One).unwrap();
    let want = oracle_bound(1.0, 100.0, 100.0, 100.0, 0.4, 1.0, 0.4 * 1.0, 0.6 * (0.3 + 2.0));
    assert!((got - want).abs() <= 1e-12 * want);
    let b = theorem_bound(&cfg).unwrap();
    assert_eq!(b.value, b.pair1.min(b.pair2));
}

#[test]
fn single_task_bound_matches_transcription() {
    let cfg = StabilityConfig { n_aux: 0, lambda_e: 1.0, ..unit() };
    let got = hardt_bound(&cfg).unwrap();
    let want = oracle_single_task(1.0, 1.0, 1.0, 100.0, 100.0);
    assert!((got - want).abs() <= 1e-12 * want);
}

#[test]
fn reduction_to_single_task_scaling() {
    let base = StabilityConfig { n_aux: 0, lambda_e: 1.0, c: 0.7, beta_e: 1.3, ..unit() };
    let ratios: Vec<f64> = [10usize, 50, 100, 500, 1000, 5000]
        .iter()
        .map(|&t| {
            let cfg = StabilityConfig { steps: t, ..base.clone() };
            theorem_bound_pair(&cfg, BoundPair::Two).unwrap() / hardt_bound(&cfg).unwrap()
        })
        .collect();
    for r in &ratios {
        assert!((r / ratios[0] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn rho_dominant_ratio_constant_over_grid() {
    let base = StabilityConfig { delta: 0.5, beta_a: 2.0, ..unit() };
    let mut ratios = Vec::new();
    for t in [50usize, 100, 400] {
        for (ne, na) in [(100usize, 300usize), (200, 600), (400, 1200)] {
            let cfg = StabilityConfig { steps: t, n_end: ne, n_aux: na, ..base.clone() };
            let k = cfg.c * cfg.smoother().0 * cfg.smoother().1;
            let x = cfg.gamma() * t as f64 / cfg.n_total();
            let e1 = rho_dominant_rate(&cfg).unwrap();
            assert!((e1 - cfg.delta.powf(1.0 / (1.0 + k)) * x.powf(1.0 - 1.0 / (k + 1.0))).abs() < 1e-15);
            // Drop the 2γL²c/(N′−γ) term: the ρ-dominated regime.
            let (bb, rho) = pair_constants(&cfg, BoundPair::One);
            let q = cfg.c * bb;
            let dominant = (1.0 + 1.0 / q) * (rho * cfg.lipschitz * cfg.c).powf(1.0 / (q + 1.0)) * x.powf(q / (1.0 + q));
            ratios.push(dominant / e1);
        }
    }
    for r in &ratios {
        assert!((r / ratios[0] - 1.0).abs() < 1e-9, "{ratios:?}");
    }
}

#[test]
fn bound_decreases_in_total_samples_at_fixed_gamma() {
    let mut last = f64::INFINITY;
    for na in [100usize, 300, 700] {
        let cfg = StabilityConfig { n_aux: na, lambda_e: lambda_for_gamma(1.0, 100, na), ..unit() };
        assert!((cfg.gamma() - 1.0).abs() < 1e-12);
        let b = theorem_bound(&cfg).unwrap().value;
        assert!(b < last);
        last = b;
    }
}

#[test]
fn forced_identical_sets_never_separate() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.5, 100, 1);
    let pair = run_coupled(&p, &NeighborPair::identical(&p), &cfg, &mut stream(3, Stream::Stability)).unwrap();
    assert!(pair.delta.iter().all(|&d| d == 0.0));
    assert_eq!(pair.w, pair.w_prime);
}

#[test]
fn zero_end_task_weight_never_separates() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.0, 200, 1);
    for s in 0..10 {
        let pair = run_sgm_pair(&p, &cfg, s).unwrap();
        assert!(pair.delta.iter().all(|&d| d == 0.0));
    }
}

#[test]
fn delta_zero_before_first_divergence() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.75, 200, 1);
    for s in 0..50 {
        let pair = run_sgm_pair(&p, &cfg, s).unwrap();
        assert_eq!(pair.delta[0], 0.0);
        let first = pair.first_divergence().unwrap_or(pair.choices.len());
        assert!(pair.delta[..=first].iter().all(|&d| d == 0.0));
    }
}

#[test]
fn replay_reproduces_every_step() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.5, 100, 1);
    let pair = run_sgm_pair(&p, &cfg, 7).unwrap();
    for t in 0..cfg.steps {
        let ch = pair.choices[t];
        let ex = match ch.task {
            Task::End => &p.end[ch.index],
            Task::Aux => &p.aux[ch.index],
        };
        // Plain-loop gradient step, no projection needed inside the domain.
        let a = 0.5 / (t + 1) as f64;
        assert_eq!(pair.alpha[t], a);
        let next: Vec<f64> = pair.w[t].iter().zip(&ex.x).map(|(w, z)| w - a * 2.0 * (w - z)).collect();
        assert!(norm(&next) <= 0.5);
        assert_eq!(next, pair.w[t + 1], "step {t}");
    }
}

#[test]
fn neighbour_sets_differ_in_at_most_one_element() {
    let p = quad(0.0);
    let mut rng = stream(1, Stream::Stability);
    for _ in 0..20 {
        let nb = make_neighbor_pair(&p, &mut rng);
        let mut left: Vec<&Example> = p.end.iter().collect();
        let mut unmatched = 0;
        for ex in &nb.end_prime {
            match left.iter().position(|e| *e == ex) {
                Some(i) => {
                    left.swap_remove(i);
                }
                None => unmatched += 1,
            }
        }
        assert!(unmatched + left.len() <= 2);
    }
}

#[test]
fn stability_of_single_pair_single_point() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.9, 100, 1);
    let pair = (0..100).map(|s| run_sgm_pair(&p, &cfg, s).unwrap()).find(|q| q.final_delta() > 0.0).unwrap();
    let z = p.eval_points(1, 0);
    let est = empirical_stability(&p, std::slice::from_ref(&pair), &z).unwrap();
    let want = (p.loss(pair.w.last().unwrap(), &z[0]) - p.loss(pair.w_prime.last().unwrap(), &z[0])).abs();
    assert_eq!(est.eps_hat, want);
    assert!(empirical_stability(&p, &[], &z).is_err());
}

#[test]
fn identical_runs_have_zero_stability() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.0, 50, 20);
    let pairs = run_pairs(&p, &cfg, 0).unwrap();
    let est = empirical_stability(&p, &pairs, &p.eval_points(16, 0)).unwrap();
    assert_eq!(est.eps_hat, 0.0);
}

#[test]
fn lipschitz_bridge_holds() {
    for family in [Family::Quadratic, Family::Logistic] {
        let spec = ToySpec { family, aux_shift: 0.4, n_end: 20, n_aux: 20, ..ToySpec::default() };
        let p = ToyProblem::generate(&spec, 5).unwrap();
        let cfg = cfg_for(&p, 0.5, 100, 200);
        let pairs = run_pairs(&p, &cfg, 1).unwrap();
        let est = empirical_stability(&p, &pairs, &p.eval_points(64, 1)).unwrap();
        let mean_delta = pairs.iter().map(|q| q.final_delta()).sum::<f64>() / pairs.len() as f64;
        assert!(est.eps_hat <= p.constants.lipschitz * mean_delta + 1e-12);
        assert!(est.eps_hat > 0.0);
    }
}

#[test]
fn quadratic_delta_estimate_matches_centre_gap() {
    // Gap of the mean gradients is β‖z̄_a − z̄_e‖ at every θ.
    let p = quad(0.6);
    let mean = |s: &[Example]| -> Vec<f64> {
        let mut m = vec![0.0; 4];
        for e in s {
            for (a, b) in m.iter_mut().zip(&e.x) {
                *a += b / s.len() as f64;
            }
        }
        m
    };
    let want = 2.0 * distance(&mean(&p.end), &mean(&p.aux));
    let got = p.measure_delta(32, 0);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!((want - 0.6).abs() < 0.1);
}

#[test]
fn divergent_step_from_zero_is_bounded_by_two_alpha_l() {
    let p = quad(0.4);
    let cfg = cfg_for(&p, 0.5, 200, 1);
    let mut seen = 0;
    for s in 0..300 {
        let pair = run_sgm_pair(&p, &cfg, s).unwrap();
        if let Some(t) = pair.first_divergence() {
            let i = pair.differing.unwrap();
            let a = pair.alpha[t];
            let g = p.gradient(&pair.w[t], &p.end[i]);
            let nb = make_neighbor_pair(&p, &mut stream(s, Stream::Stability));
            let gp = p.gradient(&pair.w_prime[t], &nb.end_prime[i]);
            assert!(norm(&g) <= cfg.lipschitz && norm(&gp) <= cfg.lipschitz);
            assert!(pair.delta[t + 1] <= 2.0 * a * cfg.lipschitz);
            seen += 1;
        }
    }
    assert!(seen > 10);
}

#[test]
fn growth_audit_on_quadratic_pairs() {
    let p = quad(0.8);
    let cfg = cfg_for(&p, 0.5, 200, 1000);
    let pairs = run_pairs(&p, &cfg, 2).unwrap();
    let report = audit_all(&pairs, &cfg, 1e-9);
    assert_eq!(report.checked, 200 * 1000);
    assert!(report.divergent_steps > 0);
    assert!(report.violations.is_empty(), "{:?}", &report.violations[..report.violations.len().min(5)]);
}

#[test]
fn same_sample_branch_trivial_when_runs_agree() {
    let cfg = unit();
    assert!(same_sample_rhs(&cfg, 0.1, 0.0) >= 0.0);
    assert_eq!(divergent_rhs(&cfg, 0.1, 0.0), 0.2);
}

#[test]
fn empty_sweep_writes_header_only() {
    let grid = SweepGrid { shifts: vec![], ..SweepGrid::default() };
    let rows = run_sweep(&grid);
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER.join(","));
}

#[test]
fn sweep_records_failures_and_round_trips() {
    let grid = SweepGrid { shifts: vec![0.0, 5.0], lambda_es: vec![0.5], steps: vec![20], seeds: 8, eval_points: 8, ..SweepGrid::default() };
    let rows = run_sweep(&grid);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ok());
    assert!(!rows[1].ok() && rows[1].eps_hat.is_none());
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
}
