//! Experiment configuration: TOML parsing, defaults, provenance and
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use aang_core::objective_space::{
    enumerate_space, named_objective, DataTag, ObjectiveSpace, OutputTag, ReprTag, StageSets, TransformTag, ValidityRule,
};
use aang_core::search::SearchConfig;
use aang_core::stability::SweepGrid;
use aang_core::synthetic::SyntheticConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Enumerate,
    TrainSingle,
    StaticMultitask,
    Aang,
    Stability,
    Report,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Enumerate => "enumerate",
            Mode::TrainSingle => "train_single",
            Mode::StaticMultitask => "static_multitask",
            Mode::Aang => "aang",
            Mode::Stability => "stability",
            Mode::Report => "report",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceConfig {
    /// `TD` or `TD+ED`. Explicit stage lists override the preset's.
    pub preset: Option<String>,
    pub data: Option<Vec<DataTag>>,
    pub transform: Option<Vec<TransformTag>>,
    pub representation: Option<Vec<ReprTag>>,
    pub output: Option<Vec<OutputTag>>,
    /// Validity rule names; the default rule set when absent.
    pub rules: Option<Vec<String>>,
    /// `train_single`: a named objective or a descriptor id in the space.
    pub objective: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Labeled `label<TAB>text` file. Synthetic data is generated when absent.
    pub end_task: Option<PathBuf>,
    /// In-domain corpus, blank-line separated documents.
    pub domain: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub space: SpaceConfig,
    pub data: DataConfig,
    pub search: SearchConfig,
    pub stability: SweepGrid,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            seeds: vec![0, 1, 2],
            jobs: 1,
            out: PathBuf::from("runs"),
            space: SpaceConfig::default(),
            data: DataConfig::default(),
            search: SearchConfig::default(),
            stability: SweepGrid::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Default,
    User,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject unknown keys instead of warning.
    pub strict: bool,
    /// Accept hyperparameters outside the documented ranges.
    pub override_ranges: bool,
}

#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    /// Dotted key of every leaf value and whether the user set it.
    pub provenance: BTreeMap<String, Origin>,
    pub warnings: Vec<String>,
}

impl ParsedConfig {
    pub fn mode(&self) -> Mode {
        self.config.mode.expect("validated configs carry a mode")
    }
}

fn leaf_keys(prefix: &str, value: &toml::Value, out: &mut BTreeSet<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

fn provenance(user: &toml::Value, full: &ExperimentConfig) -> BTreeMap<String, Origin> {
    let mut set = BTreeSet::new();
    leaf_keys("", user, &mut set);
    let mut all = BTreeSet::new();
    if let Ok(v) = toml::Value::try_from(full) {
        leaf_keys("", &v, &mut all);
    }
    all.extend(set.iter().cloned());
    all.into_iter()
        .map(|k| {
            let origin = if set.contains(&k) { Origin::User } else { Origin::Default };
            (k, origin)
        })
        .collect()
}

/// Parses a config document. Relative paths resolve against `base_dir`.
/// `mode` overrides the document's mode; a conflicting document mode is an
/// error.
pub fn parse_config_str(text: &str, base_dir: &Path, mode: Option<Mode>, opts: ParseOptions) -> Result<ParsedConfig, CliError> {
    let user: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
    let mut unknown = Vec::new();
    let mut config: ExperimentConfig = serde_ignored::deserialize(user.clone(), |path| unknown.push(path.to_string()))
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        let msg = format!("unknown config keys: {}", unknown.join(", "));
        if opts.strict {
            return Err(CliError::Config(msg));
        }
        log::warn!("{msg}");
        warnings.push(msg);
    }
    match (config.mode, mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!("config mode `{a}` conflicts with subcommand `{b}`")));
        }
        (None, None) => return Err(CliError::Config("mode is required".into())),
        (_, Some(b)) => config.mode = Some(b),
        _ => {}
    }
    resolve_paths(&mut config, base_dir);
    let provenance = provenance(&user, &config);
    warnings.extend(validate(&config, opts)?);
    Ok(ParsedConfig { config, provenance, warnings })
}

pub fn parse_config(path: &Path, mode: Option<Mode>, opts: ParseOptions) -> Result<ParsedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base, mode, opts)
}

fn resolve_paths(cfg: &mut ExperimentConfig, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(p) = cfg.data.end_task.as_mut() {
        fix(p);
    }
    if let Some(p) = cfg.data.domain.as_mut() {
        fix(p);
    }
    cfg.report.runs.iter_mut().for_each(fix);
}

/// Builds the objective space a config describes.
pub fn build_space(space: &SpaceConfig) -> Result<ObjectiveSpace, CliError> {
    let mut sets = match space.preset.as_deref() {
        None | Some("TD") => StageSets::task_data(),
        Some("TD+ED") => StageSets::task_and_domain_data(),
        Some(other) => return Err(CliError::Config(format!("space.preset must be `TD` or `TD+ED`, got `{other}`"))),
    };
    if let Some(v) = &space.data {
        sets.data = v.clone();
    }
    if let Some(v) = &space.transform {
        sets.transform = v.clone();
    }
    if let Some(v) = &space.representation {
        sets.representation = v.clone();
    }
    if let Some(v) = &space.output {
        sets.output = v.clone();
    }
    let rules = match &space.rules {
        None => ValidityRule::defaults(),
        Some(names) => names
            .iter()
            .map(|n| ValidityRule::by_name(n).ok_or_else(|| CliError::Config(format!("space.rules: unknown rule `{n}`"))))
            .collect::<Result<_, _>>()?,
    };
    let space = enumerate_space(sets, rules).map_err(|e| CliError::Config(format!("space: {e}")))?;
    if space.is_empty() {
        return Err(CliError::Config("space: the stage sets and rules leave no objectives".into()));
    }
    Ok(space)
}

/// Resolves `space.objective` to a descriptor id.
pub fn resolve_objective(space: &ObjectiveSpace, name: Option<&str>) -> Result<usize, CliError> {
    let name = name.ok_or_else(|| CliError::Config("space.objective is required for train_single".into()))?;
    if let Ok(id) = name.parse::<usize>() {
        return if id < space.len() {
            Ok(id)
        } else {
            Err(CliError::Config(format!("space.objective id {id} outside the space of {}", space.len())))
        };
    }
    let desc = named_objective(name).map_err(|e| CliError::Config(format!("space.objective: {e}")))?;
    space
        .descriptors
        .iter()
        .position(|d| d.same_point(&desc))
        .ok_or_else(|| CliError::Config(format!("space.objective `{name}` is not in the configured space")))
}

/// Documented ranges; values outside need `override_ranges`.
pub const AUX_LR_RANGE: (f64, f64) = (0.1, 1.0);
pub const SOPT_LR_RANGE: (f64, f64) = (0.01, 0.1);
pub const N_RANGE: (usize, usize) = (1, 6);

fn validate(cfg: &ExperimentConfig, opts: ParseOptions) -> Result<Vec<String>, CliError> {
    let err = |m: String| Err(CliError::Config(m));
    let mode = cfg.mode.expect("mode resolved before validation");
    let mut warnings = Vec::new();
    if cfg.seeds.is_empty() {
        return err("seeds must be non-empty".into());
    }
    if BTreeSet::from_iter(&cfg.seeds).len() != cfg.seeds.len() {
        return err("seeds must be distinct".into());
    }
    if cfg.jobs == 0 {
        return err("jobs must be ≥ 1".into());
    }
    match mode {
        Mode::Enumerate => {
            build_space(&cfg.space)?;
        }
        Mode::TrainSingle | Mode::StaticMultitask | Mode::Aang => {
            let space = build_space(&cfg.space)?;
            validate_search(&cfg.search, mode, space.len(), opts, &mut warnings)?;
            if mode == Mode::TrainSingle {
                resolve_objective(&space, cfg.space.objective.as_deref())?;
            }
            validate_data(&cfg.data, &space)?;
        }
        Mode::Stability => {
            let g = &cfg.stability;
            if g.seeds == 0 {
                return err("stability.seeds must be ≥ 1".into());
            }
            if g.eval_points == 0 {
                return err("stability.eval_points must be ≥ 1".into());
            }
            if !(g.c.is_finite() && g.c > 0.0) {
                return err(format!("stability.c must be > 0, got {}", g.c));
            }
            if let Some(l) = g.lambda_es.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                return err(format!("stability.lambda_es must lie in [0, 1], got {l}"));
            }
            if g.steps.contains(&0) {
                return err("stability.steps must be ≥ 1".into());
            }
            g.toy.validate().map_err(|e| CliError::Config(format!("stability.toy: {e}")))?;
        }
        Mode::Report => {
            if cfg.report.runs.is_empty() {
                return err("report.runs must list at least one run directory".into());
            }
            for p in &cfg.report.runs {
                if !p.is_dir() {
                    return err(format!("report.runs: {} is not a directory", p.display()));
                }
            }
        }
    }
    Ok(warnings)
}

fn validate_search(s: &SearchConfig, mode: Mode, space_len: usize, opts: ParseOptions, warnings: &mut Vec<String>) -> Result<(), CliError> {
    let err = |m: String| Err(CliError::Config(m));
    if s.n_sample == 0 {
        return err("n must be ≥ 1".into());
    }
    if mode != Mode::TrainSingle && s.n_sample > space_len {
        return err(format!("n must be ≤ the space size {space_len}, got {}", s.n_sample));
    }
    if s.aux_batch_size == 0 || s.end_batch_size == 0 {
        return err("search batch sizes must be ≥ 1".into());
    }
    if s.seq_len < 3 || s.seq_len > s.model.max_seq_len {
        return err(format!("search.seq_len must lie in 3..={}, got {}", s.model.max_seq_len, s.seq_len));
    }
    for (name, v) in [("search.aux_lr", s.aux_lr), ("search.sopt_lr", s.sopt_lr)] {
        if !(v.is_finite() && v >= 0.0) {
            return err(format!("{name} must be ≥ 0, got {v}"));
        }
    }
    if !(s.optimizer.lr.is_finite() && s.optimizer.lr > 0.0) {
        return err(format!("search.optimizer.lr must be > 0, got {}", s.optimizer.lr));
    }
    if !(s.lambda_init > 0.0 && s.lambda_init < 1.0) {
        return err(format!("search.lambda_init must lie in (0, 1), got {}", s.lambda_init));
    }
    if !(s.selection_rate > 0.0 && s.selection_rate <= 1.0) {
        return err(format!("search.selection_rate must lie in (0, 1], got {}", s.selection_rate));
    }
    if s.dev_head.sample_size == 0 || !(s.dev_head.lr > 0.0) {
        return err("search.dev_head needs sample_size ≥ 1 and lr > 0".into());
    }
    s.model.validate().map_err(|e| CliError::Config(format!("search.model: {e}")))?;

    let mut soft = Vec::new();
    if mode == Mode::Aang {
        if s.aux_lr < AUX_LR_RANGE.0 || s.aux_lr > AUX_LR_RANGE.1 {
            soft.push(format!("search.aux_lr = {} outside [{}, {}]", s.aux_lr, AUX_LR_RANGE.0, AUX_LR_RANGE.1));
        }
        if !(N_RANGE.0..=N_RANGE.1).contains(&s.n_sample) {
            soft.push(format!("n = {} outside [{}, {}]", s.n_sample, N_RANGE.0, N_RANGE.1));
        }
    }
    if mode != Mode::StaticMultitask && (s.sopt_lr < SOPT_LR_RANGE.0 || s.sopt_lr > SOPT_LR_RANGE.1) {
        soft.push(format!("search.sopt_lr = {} outside [{}, {}]", s.sopt_lr, SOPT_LR_RANGE.0, SOPT_LR_RANGE.1));
    }
    if !soft.is_empty() {
        let msg = soft.join("; ");
        if !opts.override_ranges {
            return err(format!("{msg} (pass --override-ranges to accept)"));
        }
        log::warn!("accepting out-of-range hyperparameters: {msg}");
        warnings.push(msg);
    }
    Ok(())
}

fn validate_data(d: &DataConfig, space: &ObjectiveSpace) -> Result<(), CliError> {
    let needs_domain = space.descriptors.iter().any(|x| x.d == DataTag::InDomainData);
    match &d.end_task {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Config(format!("data.end_task: {} does not exist", p.display())));
            }
            if needs_domain && d.domain.is_none() {
                return Err(CliError::Config("data.domain is required when the space reads InDomainData".into()));
            }
        }
        None => {
            if needs_domain && d.synthetic.domain_docs == 0 && d.domain.is_none() {
                return Err(CliError::Config(
                    "data.synthetic.domain_docs must be ≥ 1 when the space reads InDomainData".into(),
                ));
            }
        }
    }
    if let Some(p) = &d.domain {
        if !p.is_file() {
            return Err(CliError::Config(format!("data.domain: {} does not exist", p.display())));
        }
    }
    Ok(())
}
