//! Cross-run aggregation: windowed objective weights, resampled factor
//! trajectories and mean/SD summary tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aang_core::search::{RunReport, StepRecord};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::orchestrate::{file_sha256, write_atomic, Manifest, MANIFEST};

pub const RESAMPLE_POINTS: usize = 100;
pub const WEIGHTS_FILE: &str = "weights_ranked.csv";
pub const FACTORS_FILE: &str = "factor_trajectories.csv";
pub const TABLE_FILE: &str = "summary_table.csv";

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub file: PathBuf,
    pub report: RunReport,
}

/// Checks every artifact listed in a run directory's manifest.
pub fn verify_manifest(dir: &Path) -> Result<(), CliError> {
    if !dir.join(MANIFEST).exists() {
        return Ok(());
    }
    let m = Manifest::read(dir)?;
    for a in &m.artifacts {
        let got = file_sha256(&dir.join(&a.file))?;
        if got != a.sha256 {
            return Err(CliError::Runtime(format!("checksum mismatch for {}", dir.join(&a.file).display())));
        }
    }
    Ok(())
}

/// Loads every `*.jsonl` run report under the given directories, in name
/// order. Unreadable reports are skipped with a warning.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<LoadedRun>, CliError> {
    let mut runs = Vec::new();
    for dir in dirs {
        verify_manifest(dir)?;
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
            match RunReport::from_jsonl(&text) {
                Ok(report) => runs.push(LoadedRun { file, report }),
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
    }
    if runs.is_empty() {
        return Err(CliError::Runtime("no trajectories found".into()));
    }
    Ok(runs)
}

/// `(early, late)` window lengths for a run of `steps` recorded steps.
pub fn window_sizes(steps: usize) -> (usize, usize) {
    ((steps as f64 * 0.1).ceil() as usize, steps / 2)
}

fn mean_weights(records: &[StepRecord]) -> Option<Vec<f64>> {
    let k = records.first()?.space_weights.len();
    if k == 0 || records.iter().any(|r| r.space_weights.len() != k) {
        return None;
    }
    let mut acc = vec![0.0; k];
    for r in records {
        acc.iter_mut().zip(&r.space_weights).for_each(|(a, w)| *a += w);
    }
    acc.iter_mut().for_each(|a| *a /= records.len() as f64);
    Some(acc)
}

/// Mean per-objective weight over the early and late windows. The initial
/// record is excluded: windows cover training steps only.
pub fn window_means(records: &[StepRecord]) -> Option<(Vec<f64>, Vec<f64>)> {
    let steps: Vec<StepRecord> = records.iter().filter(|r| r.step > 0).cloned().collect();
    let (early, late) = window_sizes(steps.len());
    if early == 0 || late == 0 {
        return None;
    }
    Some((mean_weights(&steps[..early])?, mean_weights(&steps[steps.len() - late..])?))
}

/// Linear interpolation of `(x, y)` onto `n` evenly spaced points spanning
/// `x`'s range. `x` must be increasing.
pub fn resample(x: &[f64], y: &[f64], n: usize) -> Vec<(f64, f64)> {
    if x.is_empty() || n == 0 {
        return Vec::new();
    }
    let (lo, hi) = (x[0], x[x.len() - 1]);
    (0..n)
        .map(|i| {
            let t = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            let v = match x.iter().position(|&xi| xi >= t) {
                None => y[y.len() - 1],
                Some(0) => y[0],
                Some(k) if x[k] == t => y[k],
                Some(k) => y[k - 1] + (t - x[k - 1]) / (x[k] - x[k - 1]) * (y[k] - y[k - 1]),
            };
            (t, v)
        })
        .collect()
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean_{sd}` in percent with two decimals.
pub fn format_mean_sd(values: &[f64]) -> String {
    let (m, s) = mean_sd(values);
    format!("{:.2}_{{{:.2}}}", 100.0 * m, 100.0 * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeight {
    pub objective: String,
    pub early_mean: f64,
    pub early_rank: usize,
    pub late_mean: f64,
    pub late_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPoint {
    pub step: f64,
    pub series: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub seeds: usize,
    pub best_dev_mean: f64,
    pub best_dev_sd: f64,
    pub test_mean: f64,
    pub test_sd: f64,
    pub best_dev: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// Sorted by descending early-window weight.
    pub weights: Vec<ObjectiveWeight>,
    pub factors: Vec<FactorPoint>,
    pub summary: Vec<SummaryRow>,
}

fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

fn weight_table(runs: &[LoadedRun]) -> Vec<ObjectiveWeight> {
    let mut names: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for run in runs {
        let Some((early, late)) = window_means(&run.report.records) else {
            log::warn!("{}: no weight trajectory, skipped", run.file.display());
            continue;
        };
        if early.len() != run.report.objectives.len() {
            log::warn!("{}: weight and objective counts differ, skipped", run.file.display());
            continue;
        }
        for (k, name) in run.report.objectives.iter().enumerate() {
            if !names.contains(name) {
                names.push(name.clone());
            }
            let e = sums.entry(name.clone()).or_default();
            e.0 += early[k];
            e.1 += late[k];
            e.2 += 1;
        }
    }
    let early: Vec<f64> = names.iter().map(|n| sums[n].0 / sums[n].2 as f64).collect();
    let late: Vec<f64> = names.iter().map(|n| sums[n].1 / sums[n].2 as f64).collect();
    let (er, lr) = (ranks(&early), ranks(&late));
    let mut rows: Vec<ObjectiveWeight> = names
        .into_iter()
        .enumerate()
        .map(|(i, objective)| ObjectiveWeight {
            objective,
            early_mean: early[i],
            early_rank: er[i],
            late_mean: late[i],
            late_rank: lr[i],
        })
        .collect();
    rows.sort_by_key(|r| r.early_rank);
    rows
}

fn factor_table(runs: &[LoadedRun]) -> Vec<FactorPoint> {
    let mut acc: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for run in runs {
        let snaps: Vec<(f64, &BTreeMap<String, f64>)> = run
            .report
            .records
            .iter()
            .filter_map(|r| r.factors.as_ref().map(|f| (r.step as f64, &f.primitives)))
            .collect();
        if snaps.is_empty() {
            continue;
        }
        let x: Vec<f64> = snaps.iter().map(|s| s.0).collect();
        for key in snaps[0].1.keys() {
            let y: Vec<f64> = snaps.iter().map(|s| s.1.get(key).copied().unwrap_or(f64::NAN)).collect();
            acc.entry(key.clone()).or_default().push(resample(&x, &y, RESAMPLE_POINTS));
        }
    }
    let mut out = Vec::new();
    for (series, curves) in acc {
        for i in 0..RESAMPLE_POINTS.min(curves[0].len()) {
            let n = curves.len() as f64;
            let step = curves.iter().map(|c| c[i].0).sum::<f64>() / n;
            let value = curves.iter().map(|c| c[i].1).sum::<f64>() / n;
            out.push(FactorPoint { step, series: series.clone(), value });
        }
    }
    out
}

fn summary_table(runs: &[LoadedRun]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for run in runs {
        let kind = serde_json::to_value(run.report.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let g = groups.entry(kind).or_default();
        g.0.push(run.report.best_dev_accuracy);
        g.1.push(run.report.test_accuracy);
    }
    groups
        .into_iter()
        .map(|(kind, (dev, test))| {
            let (dm, ds) = mean_sd(&dev);
            let (tm, ts) = mean_sd(&test);
            SummaryRow {
                kind,
                seeds: dev.len(),
                best_dev_mean: dm,
                best_dev_sd: ds,
                test_mean: tm,
                test_sd: ts,
                best_dev: format_mean_sd(&dev),
                test: format_mean_sd(&test),
            }
        })
        .collect()
}

pub fn aggregate(runs: &[LoadedRun]) -> Result<AggregateReport, CliError> {
    if runs.is_empty() {
        return Err(CliError::Runtime("no trajectories found".into()));
    }
    Ok(AggregateReport {
        weights: weight_table(runs),
        factors: factor_table(runs),
        summary: summary_table(runs),
    })
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes the three report files and returns their names.
pub fn write_report(report: &AggregateReport, out: &Path) -> Result<Vec<String>, CliError> {
    let to_string = |w: csv::Writer<Vec<u8>>| -> Result<Vec<u8>, CliError> { w.into_inner().map_err(|e| CliError::Runtime(e.to_string())) };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["objective", "early_mean", "early_rank", "late_mean", "late_rank"])?;
    for r in &report.weights {
        w.write_record([r.objective.clone(), f6(r.early_mean), r.early_rank.to_string(), f6(r.late_mean), r.late_rank.to_string()])?;
    }
    write_atomic(&out.join(WEIGHTS_FILE), &to_string(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "series", "value"])?;
    for p in &report.factors {
        w.write_record([f6(p.step), p.series.clone(), f6(p.value)])?;
    }
    write_atomic(&out.join(FACTORS_FILE), &to_string(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "seeds", "best_dev_mean", "best_dev_sd", "test_mean", "test_sd", "best_dev", "test"])?;
    for r in &report.summary {
        w.write_record([
            r.kind.clone(),
            r.seeds.to_string(),
            f6(r.best_dev_mean),
            f6(r.best_dev_sd),
            f6(r.test_mean),
            f6(r.test_sd),
            r.best_dev.clone(),
            r.test.clone(),
        ])?;
    }
    write_atomic(&out.join(TABLE_FILE), &to_string(w)?)?;
    Ok(vec![WEIGHTS_FILE.into(), FACTORS_FILE.into(), TABLE_FILE.into()])
}
