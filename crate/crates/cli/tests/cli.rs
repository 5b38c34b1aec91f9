use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use aang_cli::aggregate::*;
use aang_cli::config::*;
use aang_cli::orchestrate::*;
use aang_cli::CliError;
use aang_core::search::{RunKind, RunReport, StepRecord};

const TINY: &str = r#"
seeds = [0, 1, 2]
[search]
steps = 4
eval_every = 2
[search.model]
d_model = 16
n_layers = 1
d_ff = 32
[data.synthetic]
examples = 60
"#;

fn parse(text: &str, mode: Option<Mode>) -> Result<ParsedConfig, CliError> {
    parse_config_str(text, Path::new("."), mode, ParseOptions::default())
}

fn config_message(r: Result<ParsedConfig, CliError>) -> String {
    match r {
        Err(CliError::Config(m)) => m,
        Err(other) => panic!("expected a config error, got {other}"),
        Ok(_) => panic!("expected a config error"),
    }
}

#[test]
fn minimal_config_fills_defaults() {
    let p = parse("mode = \"enumerate\"\n[space]\npreset = \"TD\"\n", None).unwrap();
    assert_eq!(p.mode(), Mode::Enumerate);
    assert_eq!(p.config.seeds, vec![0, 1, 2]);
    assert_eq!(p.provenance["space.preset"], Origin::User);
    assert_eq!(p.provenance["search.steps"], Origin::Default);
    assert_eq!(build_space(&p.config.space).unwrap().len(), 31);
}

#[test]
fn zero_n_is_named() {
    let msg = config_message(parse("mode = \"aang\"\n[search]\nn_sample = 0\n", None));
    assert!(msg.contains("n must be ≥ 1"), "{msg}");
}

#[test]
fn domain_space_needs_domain_path_with_file_data() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("task.tsv"), "a\txyz\nb\tzyx\n").unwrap();
    let text = "mode = \"aang\"\n[space]\npreset = \"TD+ED\"\n[data]\nend_task = \"task.tsv\"\n";
    let msg = config_message(parse_config_str(text, dir.path(), None, ParseOptions::default()));
    assert!(msg.contains("data.domain"), "{msg}");
}

#[test]
fn missing_paths_rejected_at_parse_time() {
    let msg = config_message(parse("mode = \"aang\"\n[data]\nend_task = \"/no/such/file.tsv\"\n", None));
    assert!(msg.contains("data.end_task"), "{msg}");
}

#[test]
fn unknown_keys_warn_or_fail_in_strict_mode() {
    let text = "mode = \"enumerate\"\ncolour = 1\n";
    let p = parse(text, None).unwrap();
    assert!(p.warnings.iter().any(|w| w.contains("colour")));
    let strict = parse_config_str(text, Path::new("."), None, ParseOptions { strict: true, ..Default::default() });
    assert!(config_message(strict).contains("colour"));
}

#[test]
fn out_of_range_needs_override() {
    let text = "mode = \"aang\"\n[search]\naux_lr = 0.01\n";
    assert!(config_message(parse(text, None)).contains("search.aux_lr"));
    let p = parse_config_str(text, Path::new("."), None, ParseOptions { override_ranges: true, ..Default::default() }).unwrap();
    assert_eq!(p.config.search.aux_lr, 0.01);
}

#[test]
fn subcommand_mode_conflict() {
    assert!(config_message(parse("mode = \"aang\"", Some(Mode::Report))).contains("conflicts"));
    assert!(config_message(parse("", None)).contains("mode"));
}

#[test]
fn single_objective_requires_a_known_objective() {
    assert!(config_message(parse("mode = \"train_single\"", None)).contains("space.objective"));
    let p = parse("mode = \"train_single\"\n[space]\nobjective = \"GPT-style\"\n", None).unwrap();
    let space = build_space(&p.config.space).unwrap();
    let id = resolve_objective(&space, Some("GPT-style")).unwrap();
    assert_eq!(space.descriptors[id].to_string(), "(EndTaskData, NoOp, LeftToRight, DenoiseToken)");
}

fn run_tiny(out: &Path, jobs: usize) -> Outcome {
    let p = parse(TINY, Some(Mode::Aang)).unwrap();
    run_experiment(&p, out, jobs).unwrap()
}

#[test]
fn three_seeds_give_three_reports_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_tiny(dir.path(), 2);
    assert_eq!(out.exit_code(), 0);
    for s in 0..3 {
        assert!(dir.path().join(format!("seed_{s}.jsonl")).is_file());
    }
    let summary = fs::read_to_string(dir.path().join(SUMMARY)).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let m = Manifest::read(dir.path()).unwrap();
    assert!(m.complete);
    for a in &m.artifacts {
        assert_eq!(file_sha256(&dir.path().join(&a.file)).unwrap(), a.sha256);
    }
}

#[test]
fn reruns_and_job_counts_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_tiny(a.path(), 1);
    run_tiny(b.path(), 3);
    for s in 0..3 {
        let f = format!("seed_{s}.jsonl");
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
    }
    assert_eq!(fs::read(a.path().join(SUMMARY)).unwrap(), fs::read(b.path().join(SUMMARY)).unwrap());
}

#[test]
fn resume_completes_only_unfinished_seeds() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny(dir.path(), 1);
    let original = fs::read(dir.path().join("seed_1.jsonl")).unwrap();
    let mut m = Manifest::read(dir.path()).unwrap();
    m.seeds[1].status = SeedStatus::Pending;
    m.seeds[1].artifact = None;
    m.seeds[1].sha256 = None;
    m.complete = false;
    fs::write(dir.path().join(MANIFEST), serde_json::to_string(&m).unwrap()).unwrap();
    fs::remove_file(dir.path().join("seed_1.jsonl")).unwrap();

    let out = run_tiny(dir.path(), 1);
    assert_eq!(out.resumed, vec![0, 2]);
    assert!(out.manifest.complete);
    assert_eq!(fs::read(dir.path().join("seed_1.jsonl")).unwrap(), original);
}

#[test]
fn partial_failure_exit_code() {
    let entry = |seed, status| SeedEntry { seed, status, artifact: None, sha256: None, wall_time_s: None, error: None };
    let mut o = Outcome {
        out_dir: PathBuf::new(),
        manifest: Manifest {
            mode: Mode::Aang,
            config_hash: String::new(),
            version: String::new(),
            seeds: vec![entry(0, SeedStatus::Complete), entry(1, SeedStatus::Failed)],
            artifacts: vec![],
            complete: false,
            wall_time_s: 0.0,
        },
        resumed: vec![],
    };
    assert_eq!(o.exit_code(), 3);
    o.manifest.seeds[0].status = SeedStatus::Failed;
    assert_eq!(o.exit_code(), 2);
}

#[test]
fn summary_csv_round_trips_fixed_decimals() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny(dir.path(), 1);
    let mut r = csv::Reader::from_path(dir.path().join(SUMMARY)).unwrap();
    for (row, s) in r.records().zip(0..) {
        let row = row.unwrap();
        let report = RunReport::from_jsonl(&fs::read_to_string(dir.path().join(format!("seed_{s}.jsonl"))).unwrap()).unwrap();
        let acc: f64 = row[4].parse().unwrap();
        assert_eq!(row[4].split('.').nth(1).unwrap().len(), 6);
        assert!((acc - report.best_dev_accuracy).abs() <= 5e-7);
        assert_eq!(format!("{acc:.6}"), &row[4]);
    }
}

#[test]
fn window_lengths() {
    assert_eq!(window_sizes(10), (1, 5));
    assert_eq!(window_sizes(11), (2, 5));
    assert_eq!(window_sizes(200), (20, 100));
    assert_eq!(window_sizes(1), (1, 0));
}

fn record(step: usize, weights: Vec<f64>) -> StepRecord {
    StepRecord {
        step,
        lambda_e: 0.5,
        sampled: vec![],
        weights: vec![],
        aux_losses: vec![],
        end_train_loss: None,
        total_loss: None,
        space_weights: weights,
        meta_grad_w: None,
        meta_grad_lambda: None,
        dev_head_loss: None,
        dev_loss: None,
        dev_accuracy: None,
        factors: None,
    }
}

fn report_with(records: Vec<StepRecord>, names: &[&str]) -> LoadedRun {
    LoadedRun {
        file: PathBuf::from("constructed.jsonl"),
        report: RunReport {
            kind: RunKind::Aang,
            seed: 0,
            objectives: names.iter().map(|s| s.to_string()).collect(),
            records,
            best_dev_step: 0,
            best_dev_accuracy: 0.5,
            test_accuracy: 0.5,
        },
    }
}

#[test]
fn weight_that_vanishes_tops_early_and_bottoms_late() {
    let records: Vec<StepRecord> = (0..=100)
        .map(|s| if s <= 50 { record(s, vec![1.0, 0.0, 0.0]) } else { record(s, vec![0.0, 0.5, 0.5]) })
        .collect();
    let rep = aggregate(&[report_with(records, &["A", "B", "C"])]).unwrap();
    let a = rep.weights.iter().find(|w| w.objective == "A").unwrap();
    assert_eq!((a.early_rank, a.late_rank), (1, 3));
    assert_eq!(a.early_mean, 1.0);
    assert_eq!(a.late_mean, 0.0);
}

#[test]
fn uniform_weights_keep_their_ranks() {
    let records: Vec<StepRecord> = (0..=20).map(|s| record(s, vec![0.25; 4])).collect();
    let rep = aggregate(&[report_with(records, &["A", "B", "C", "D"])]).unwrap();
    for w in &rep.weights {
        assert_eq!(w.early_rank, w.late_rank);
        assert_eq!(w.early_mean, 0.25);
        assert_eq!(w.late_mean, 0.25);
    }
    assert_eq!(rep.summary[0].best_dev_sd, 0.0);
}

#[test]
fn resampling_is_linear_and_hits_endpoints() {
    let x = [0.0, 10.0, 30.0];
    let y = [0.0, 1.0, -1.0];
    let r = resample(&x, &y, 100);
    assert_eq!(r.len(), 100);
    assert_eq!(r[0], (0.0, 0.0));
    assert_eq!(r[99], (30.0, -1.0));
    for &(t, v) in &r {
        let want = if t <= 10.0 { t / 10.0 } else { 1.0 - (t - 10.0) / 10.0 };
        assert!((v - want).abs() < 1e-12);
    }
}

#[test]
fn mean_sd_convention() {
    assert_eq!(format_mean_sd(&[0.9]), "90.00_{0.00}");
    assert_eq!(format_mean_sd(&[0.8, 1.0]), "90.00_{14.14}");
}

#[test]
fn empty_run_dir_has_no_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    match load_runs(&[dir.path().to_path_buf()]) {
        Err(e) => assert!(e.to_string().contains("no trajectories found")),
        Ok(_) => panic!("expected an error"),
    }
}

#[test]
fn aggregation_refuses_checksum_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny(dir.path(), 1);
    assert!(load_runs(&[dir.path().to_path_buf()]).is_ok());
    let f = dir.path().join("seed_0.jsonl");
    let mut text = fs::read_to_string(&f).unwrap();
    text.push('\n');
    fs::write(&f, text).unwrap();
    let err = load_runs(&[dir.path().to_path_buf()]).unwrap_err();
    assert!(err.to_string().contains("checksum mismatch"));
}

#[test]
fn stability_mode_writes_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seeds = [4]\n[stability]\nshifts = [0.0, 0.4]\nlambda_es = [0.5]\nsteps = [20]\nseeds = 10\neval_points = 8\n";
    let p = parse(text, Some(Mode::Stability)).unwrap();
    let out = run_experiment(&p, dir.path(), 1).unwrap();
    assert_eq!(out.exit_code(), 0);
    let csv = fs::read_to_string(dir.path().join("stability_seed4.csv")).unwrap();
    assert!(csv.starts_with("family,c,T,N_e,N_a,lambda_e,L,beta_e,beta_a,delta,eps_hat,eps_se,bound,pair,gap"));
    assert_eq!(csv.lines().count(), 3);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aang"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin().args(["enumerate", "--out"]).arg(dir.path().join("e")).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("e/space.tsv")).unwrap().lines().count(), 32);

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[search]\nn_sample = 0\n").unwrap();
    let out = bin().args(["aang", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be ≥ 1"));

    let strict = dir.path().join("typo.toml");
    fs::write(&strict, "[search]\nstpes = 3\n").unwrap();
    let code = bin().args(["enumerate", "--strict", "--config"]).arg(&strict).arg("--out").arg(dir.path().join("s")).status().unwrap();
    assert_eq!(code.code(), Some(1));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let rep = dir.path().join("rep.toml");
    fs::write(&rep, format!("[report]\nruns = [{:?}]\n", empty)).unwrap();
    let out = bin().args(["report", "--config"]).arg(&rep).arg("--out").arg(dir.path().join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no trajectories found"));
}

#[test]
fn binary_runs_a_seed_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let st = bin().args(["static", "--seed", "5", "--config"]).arg(&cfg).arg("--out").arg(&run).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(run.join("seed_5.jsonl").is_file());
    let rep = dir.path().join("rep.toml");
    fs::write(&rep, format!("[report]\nruns = [{:?}]\n", run)).unwrap();
    let st = bin().args(["report", "--config"]).arg(&rep).arg("--out").arg(dir.path().join("r")).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let table = fs::read_to_string(dir.path().join("r").join(TABLE_FILE)).unwrap();
    assert!(table.contains("static_multitask,1,"));
}
