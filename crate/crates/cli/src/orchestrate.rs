//! Runs a configured experiment over its seeds and writes per-seed JSONL,
//! a summary CSV and a manifest with checksums.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use aang_core::corpus::{parse_labeled_tsv, split_documents};
use aang_core::objective_space::DataTag;
use aang_core::rng::{stream, Stream};
use aang_core::search::{run_search, run_single_objective, run_static_multitask, RunReport, SearchSetup};
use aang_core::stability::{run_sweep, write_sweep_csv, SweepGrid};
use aang_core::synthetic::{bind_sources, data_seed, encode_shared, generate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{aggregate, load_runs, write_report};
use crate::config::{build_space, resolve_objective, ExperimentConfig, Mode, ParsedConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub status: SeedStatus,
    pub artifact: Option<String>,
    pub sha256: Option<String>,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<SeedEntry>,
    pub artifacts: Vec<Artifact>,
    pub complete: bool,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Seeds skipped because a previous run already completed them.
    pub resumed: Vec<u64>,
}

impl Outcome {
    /// 0 when every seed completed, 3 when some failed, 2 when all failed.
    pub fn exit_code(&self) -> i32 {
        let failed = self.manifest.seeds.iter().filter(|s| s.status != SeedStatus::Complete).count();
        match failed {
            0 => 0,
            n if n == self.manifest.seeds.len() => 2,
            _ => 3,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Hash of everything that affects results; output location, job count and
/// the seed list are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    c.jobs = 1;
    c.seeds.clear();
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

/// Objective space and data sources for one seed, with the vocabulary size
/// and class count the model needs.
pub fn build_setup(cfg: &ExperimentConfig, seed: u64) -> Result<(SearchSetup, usize, usize), CliError> {
    let space = build_space(&cfg.space)?;
    let needs_domain = space.descriptors.iter().any(|d| d.d == DataTag::InDomainData);
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::io(p, e));
    let file_domain = match &cfg.data.domain {
        Some(p) => Some(split_documents(&read(p)?)),
        None => None,
    };
    let (rows, domain) = match &cfg.data.end_task {
        Some(p) => (parse_labeled_tsv(&read(p)?)?, file_domain),
        None => {
            let syn = generate(&cfg.data.synthetic, &mut stream(data_seed(seed), Stream::Data))?;
            (syn.rows, file_domain.or(Some(syn.domain_texts)))
        }
    };
    let domain = if needs_domain { domain } else { None };
    let (ds, corpus, vocab) = encode_shared(rows, domain, seed)?;
    let classes = ds.num_classes;
    Ok((bind_sources(space, ds, corpus)?, vocab.size(), classes))
}

/// One training run of the given mode.
pub fn run_training_seed(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<RunReport, CliError> {
    let (setup, vocab, classes) = build_setup(cfg, seed)?;
    let mut sc = cfg.search.clone();
    sc.model.vocab_size = vocab;
    sc.model.num_classes = classes;
    let report = match mode {
        Mode::Aang => run_search(&sc, &setup, seed)?,
        Mode::StaticMultitask => run_static_multitask(&sc, &setup, seed)?,
        Mode::TrainSingle => {
            let id = resolve_objective(&setup.space, cfg.space.objective.as_deref())?;
            run_single_objective(&sc, &setup, id, seed)?
        }
        other => return Err(CliError::Runtime(format!("mode {other} has no training run"))),
    };
    Ok(report)
}

fn seed_artifact(mode: Mode, seed: u64) -> String {
    match mode {
        Mode::Stability => format!("stability_seed{seed}.csv"),
        _ => format!("seed_{seed}.jsonl"),
    }
}

/// Produces one seed's artifact bytes. Stability seeds with failed grid
/// points still produce a file but report an error.
fn run_seed(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> (Option<Vec<u8>>, Option<String>) {
    match mode {
        Mode::Stability => {
            let grid = SweepGrid { seed, ..cfg.stability.clone() };
            let rows = run_sweep(&grid);
            let mut buf = Vec::new();
            if let Err(e) = write_sweep_csv(&rows, &mut buf) {
                return (None, Some(e.to_string()));
            }
            let failed = rows.iter().filter(|r| !r.ok()).count();
            let err = (failed > 0).then(|| format!("{failed} of {} grid points failed", rows.len()));
            (Some(buf), err)
        }
        _ => match run_training_seed(cfg, mode, seed).and_then(|r| Ok(r.to_jsonl()?)) {
            Ok(text) => (Some(text.into_bytes()), None),
            Err(e) => (None, Some(e.to_string())),
        },
    }
}

fn previous_manifest(dir: &Path, hash: &str) -> Option<Manifest> {
    let m = Manifest::read(dir).ok()?;
    if m.config_hash == hash {
        Some(m)
    } else {
        log::warn!("existing manifest in {} has a different config hash; starting fresh", dir.display());
        None
    }
}

fn reusable(dir: &Path, entry: &SeedEntry) -> bool {
    match (entry.status, &entry.artifact, &entry.sha256) {
        (SeedStatus::Complete, Some(file), Some(sum)) => file_sha256(&dir.join(file)).map(|s| &s == sum).unwrap_or(false),
        _ => false,
    }
}

/// Runs every seed of the configured mode under `out`, with at most `jobs`
/// seeds in flight. Seeds already completed under the same config hash are
/// kept.
pub fn run_experiment(parsed: &ParsedConfig, out: &Path, jobs: usize) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let cfg = &parsed.config;
    let mode = parsed.mode();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = config_hash(cfg)?;

    let resolved = serde_json::json!({ "config": cfg, "provenance": parsed.provenance });
    write_atomic(&out.join(RESOLVED_CONFIG), serde_json::to_string_pretty(&resolved)?.as_bytes())?;

    let mut manifest = Manifest {
        mode,
        config_hash: hash.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: Vec::new(),
        artifacts: Vec::new(),
        complete: false,
        wall_time_s: 0.0,
    };
    let mut resumed = Vec::new();
    let mut extra = Vec::new();

    match mode {
        Mode::Enumerate => {
            let space = build_space(&cfg.space)?;
            write_atomic(&out.join("space.tsv"), space.to_table().as_bytes())?;
            extra.push("space.tsv".to_string());
        }
        Mode::Report => {
            let runs = load_runs(&cfg.report.runs)?;
            let report = aggregate(&runs)?;
            extra.extend(write_report(&report, out)?);
        }
        _ => {
            let prev = previous_manifest(out, &hash);
            manifest.seeds = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let old = prev.as_ref().and_then(|m| m.seeds.iter().find(|e| e.seed == seed));
                    match old {
                        Some(e) if reusable(out, e) => {
                            resumed.push(seed);
                            e.clone()
                        }
                        _ => SeedEntry { seed, status: SeedStatus::Pending, artifact: None, sha256: None, wall_time_s: None, error: None },
                    }
                })
                .collect();
            manifest.write(out)?;

            let pending: Vec<usize> = (0..manifest.seeds.len()).filter(|&i| manifest.seeds[i].status != SeedStatus::Complete).collect();
            let shared = Mutex::new(manifest);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            pool.install(|| {
                pending.par_iter().try_for_each(|&i| -> Result<(), CliError> {
                    let seed = cfg.seeds[i];
                    let t = Instant::now();
                    let (bytes, error) = run_seed(cfg, mode, seed);
                    let mut entry = SeedEntry { seed, status: SeedStatus::Failed, artifact: None, sha256: None, wall_time_s: None, error };
                    if let Some(bytes) = bytes {
                        let file = seed_artifact(mode, seed);
                        write_atomic(&out.join(&file), &bytes)?;
                        entry.sha256 = Some(sha256_hex(&bytes));
                        entry.artifact = Some(file);
                        if entry.error.is_none() {
                            entry.status = SeedStatus::Complete;
                        }
                    }
                    if let Some(e) = &entry.error {
                        log::error!("seed {seed} failed: {e}");
                    }
                    entry.wall_time_s = Some(t.elapsed().as_secs_f64());
                    let mut m = shared.lock().expect("manifest lock");
                    m.seeds[i] = entry;
                    m.write(out)
                })
            })?;
            manifest = shared.into_inner().expect("manifest lock");

            if let Some(summary) = summary_csv(out, mode, &manifest)? {
                write_atomic(&out.join(SUMMARY), summary.as_bytes())?;
                extra.push(SUMMARY.to_string());
            }
        }
    }

    extra.push(RESOLVED_CONFIG.to_string());
    let mut files: Vec<String> = manifest.seeds.iter().filter_map(|e| e.artifact.clone()).collect();
    files.extend(extra);
    manifest.artifacts = files
        .into_iter()
        .map(|f| Ok(Artifact { sha256: file_sha256(&out.join(&f))?, file: f }))
        .collect::<Result<_, CliError>>()?;
    manifest.complete = manifest.seeds.iter().all(|e| e.status == SeedStatus::Complete);
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(Outcome { out_dir: out.to_path_buf(), manifest, resumed })
}

pub const SUMMARY_HEADER: [&str; 7] = ["seed", "kind", "steps", "best_dev_step", "best_dev_accuracy", "test_accuracy", "final_lambda_e"];

/// Per-seed metrics with fixed six-decimal floats.
fn summary_csv(out: &Path, mode: Mode, manifest: &Manifest) -> Result<Option<String>, CliError> {
    if mode == Mode::Stability {
        return Ok(None);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for e in manifest.seeds.iter().filter(|e| e.status == SeedStatus::Complete) {
        let Some(file) = &e.artifact else { continue };
        let path = out.join(file);
        let text = fs::read_to_string(&path).map_err(|err| CliError::io(&path, err))?;
        let r = RunReport::from_jsonl(&text)?;
        let last_lambda = r.records.last().map_or(f64::NAN, |x| x.lambda_e);
        let kind = serde_json::to_value(r.kind)?.as_str().unwrap_or_default().to_string();
        w.write_record([
            r.seed.to_string(),
            kind,
            r.records.len().saturating_sub(1).to_string(),
            r.best_dev_step.to_string(),
            format!("{:.6}", r.best_dev_accuracy),
            format!("{:.6}", r.test_accuracy),
            format!("{last_lambda:.6}"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(Some(String::from_utf8(bytes).expect("csv output is UTF-8")))
}
