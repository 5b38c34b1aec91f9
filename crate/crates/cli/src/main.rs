use std::path::PathBuf;
use std::process::ExitCode;

use aang_cli::config::{parse_config, parse_config_str, Mode, ParseOptions};
use aang_cli::orchestrate::run_experiment;
use aang_cli::CliError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aang", version, about = "Auxiliary objective search, multitask training and stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate the configured objective space.
    Enumerate(Common),
    /// Train the end task with one auxiliary objective.
    Train(Common),
    /// Static multitask training with uniform weights.
    Static(Common),
    /// Full search with learned objective weights.
    Aang(Common),
    /// Stability sweep on toy problems.
    Stability(Common),
    /// Aggregate finished runs.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reject unknown config keys.
    #[arg(long)]
    strict: bool,
    /// Accept hyperparameters outside the documented ranges.
    #[arg(long)]
    override_ranges: bool,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (mode, common) = match cli.command {
        Command::Enumerate(c) => (Mode::Enumerate, c),
        Command::Train(c) => (Mode::TrainSingle, c),
        Command::Static(c) => (Mode::StaticMultitask, c),
        Command::Aang(c) => (Mode::Aang, c),
        Command::Stability(c) => (Mode::Stability, c),
        Command::Report(c) => (Mode::Report, c),
    };
    let opts = ParseOptions { strict: common.strict, override_ranges: common.override_ranges };
    let mut parsed = match &common.config {
        Some(p) => parse_config(p, Some(mode), opts)?,
        None => parse_config_str("", std::path::Path::new("."), Some(mode), opts)?,
    };
    if let Some(s) = common.seed {
        parsed.config.seeds = vec![s];
    }
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Config("jobs must be ≥ 1".into()));
        }
        parsed.config.jobs = j;
    }
    if let Some(o) = common.out {
        parsed.config.out = o;
    }
    let out = parsed.config.out.clone();
    let outcome = run_experiment(&parsed, &out, parsed.config.jobs)?;
    for e in &outcome.manifest.seeds {
        let status = serde_json::to_value(e.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        match &e.error {
            Some(err) => println!("seed {}: {status} ({err})", e.seed),
            None => println!("seed {}: {status}", e.seed),
        }
    }
    if !outcome.resumed.is_empty() {
        println!("reused completed seeds: {:?}", outcome.resumed);
    }
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
