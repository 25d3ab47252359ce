//! `asl` - reproducible experiment runner.
//!
//! Each run executes one named experiment from a JSON config (plus flag
//! overrides), appends long-format CSV rows, and writes a self-contained
//! JSON summary. `asl replay <summary>` re-executes the run and fails
//! unless every metric reproduces bit-identically.
//!
//! Exit codes: 0 success; 1 invalid configuration (machine-readable JSON on
//! stderr); 2 a verdict that should hold failed (negative controls invert
//! this); 3 replay mismatch.

mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use experiments::{
    config_digest, default_trials, execute, CliError, CliResult, ConfigFile, CsvRow,
    ExperimentConfig, VERSION,
};

#[derive(Parser)]
#[command(name = "asl", version, about = "Stable query answering, adaptive analysts, and bound verifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LemmaVariant {
    Sq,
    Lowsens,
    Tv,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; omit to rely on defaults and overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count override.
    #[arg(long)]
    trials: Option<usize>,
    /// Output base path; writes <out>.csv and <out>.summary.json.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy game: mechanism vs analyst over k rounds, many trials.
    Game(RunArgs),
    /// The overfitting attack against a configured mechanism.
    AttackDemo(RunArgs),
    /// Monitor amplification over T simulated interactions per trial.
    Monitor(RunArgs),
    /// De-correlated expectation verifiers.
    VerifyLemma {
        #[arg(value_enum)]
        variant: LemmaVariant,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Exact selection-utility check (single instance or random sweep).
    EmUtility(RunArgs),
    /// Leak-and-query lower-bound demonstration.
    LowerBound(RunArgs),
    /// Generalization bound check for stable selectors.
    Generalization(RunArgs),
    /// Transfer-theorem parameter planning and the sample-size table.
    Plan(RunArgs),
    /// Re-execute a summary and require bit-identical metrics.
    Replay {
        summary_path: PathBuf,
    },
}

/// Self-contained record of one run.
#[derive(Serialize, Deserialize)]
struct Summary {
    version: String,
    config: ExperimentConfig,
    config_digest: String,
    metrics: BTreeMap<String, f64>,
    holds: Option<bool>,
    detail: Value,
}

fn main() {
    configure_workers();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({ "error": e.message(), "kind": e.kind() });
            eprintln!("{report}");
            match e {
                CliError::Config(_) => 1,
                CliError::Runtime(_) => 1,
            }
        }
    };
    std::process::exit(code);
}

/// ASL_THREADS caps the trial worker pool.
fn configure_workers() {
    if let Ok(v) = std::env::var("ASL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Game(args) => run_experiment("game", args),
        Command::AttackDemo(args) => run_experiment("attack_demo", args),
        Command::Monitor(args) => run_experiment("monitor", args),
        Command::VerifyLemma { variant, args } => {
            let name = match variant {
                LemmaVariant::Sq => "lemma_sq",
                LemmaVariant::Lowsens => "lemma_lowsens",
                LemmaVariant::Tv => "lemma_tv",
            };
            run_experiment(name, args)
        }
        Command::EmUtility(args) => run_experiment("em_utility", args),
        Command::LowerBound(args) => run_experiment("lower_bound", args),
        Command::Generalization(args) => run_experiment("generalization", args),
        Command::Plan(args) => run_experiment("plan", args),
        Command::Replay { summary_path } => replay(&summary_path),
    }
}

fn load_config_file(path: &Option<PathBuf>) -> CliResult<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn resolve(experiment: &str, args: RunArgs) -> CliResult<ExperimentConfig> {
    let file = load_config_file(&args.config)?;
    if let Some(named) = &file.experiment {
        if named != experiment {
            return Err(CliError::Config(format!(
                "config names experiment {named:?} but the subcommand runs {experiment:?}"
            )));
        }
    }
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Config("a seed is required (config or --seed)".into()))?;
    let trials = args
        .trials
        .or(file.trials)
        .unwrap_or_else(|| default_trials(experiment));
    Ok(ExperimentConfig {
        experiment: experiment.to_string(),
        params: file.params,
        seed,
        trials,
        out_path: args.out.or(file.out_path),
    })
}

fn run_experiment(experiment: &str, args: RunArgs) -> CliResult<i32> {
    let config = resolve(experiment, args)?;
    let outcome = execute(&config)?;
    let summary = Summary {
        version: VERSION.to_string(),
        config_digest: config_digest(&config),
        config,
        metrics: outcome.metrics.clone(),
        holds: outcome.holds,
        detail: outcome.detail,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Runtime(format!("summary serialization: {e}")))?;
    println!("{text}");
    write_outputs(&summary, &outcome.rows)?;
    Ok(match outcome.holds {
        Some(false) => 2,
        _ => 0,
    })
}

fn write_outputs(summary: &Summary, rows: &[CsvRow]) -> CliResult<()> {
    let base = summary
        .config
        .out_path
        .clone()
        .unwrap_or_else(|| summary.config.experiment.clone());
    let summary_path = format!("{base}.summary.json");
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Runtime(format!("summary serialization: {e}")))?;
    fs::write(&summary_path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {summary_path}: {e}")))?;
    if !rows.is_empty() {
        append_csv(&format!("{base}.csv"), rows)?;
    }
    Ok(())
}

/// Append rows under a stable header, writing the header only on creation.
fn append_csv(path: &str, rows: &[CsvRow]) -> CliResult<()> {
    let exists = Path::new(path).exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Runtime(format!("cannot open {path}: {e}")))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(!exists)
        .from_writer(file);
    for r in rows {
        writer
            .serialize(r)
            .map_err(|e| CliError::Runtime(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Runtime(format!("csv flush: {e}")))?;
    Ok(())
}

fn replay(summary_path: &Path) -> CliResult<i32> {
    let text = fs::read_to_string(summary_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", summary_path.display())))?;
    let summary: Summary = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad summary {}: {e}", summary_path.display())))?;
    let digest = config_digest(&summary.config);
    if digest != summary.config_digest {
        return Err(CliError::Config(format!(
            "config mismatch: the summary's seed-independent config hashes to {digest}, recorded {}",
            summary.config_digest
        )));
    }
    let outcome = execute(&summary.config)?;
    let diffs = diff_metrics(&summary.metrics, &outcome.metrics);
    if diffs.is_empty() {
        println!(
            "replay ok: {} metrics identical for {} (seed {})",
            summary.metrics.len(),
            summary.config.experiment,
            summary.config.seed
        );
        Ok(0)
    } else {
        eprintln!("replay mismatch for {}:", summary.config.experiment);
        for (name, old, new) in diffs {
            eprintln!("  {name}: recorded {old:?}, replayed {new:?}");
        }
        Ok(3)
    }
}

fn diff_metrics(
    old: &BTreeMap<String, f64>,
    new: &BTreeMap<String, f64>,
) -> Vec<(String, Option<f64>, Option<f64>)> {
    let mut diffs = Vec::new();
    for (k, v) in old {
        match new.get(k) {
            Some(n) if n.to_bits() == v.to_bits() => {}
            other => diffs.push((k.clone(), Some(*v), other.copied())),
        }
    }
    for (k, v) in new {
        if !old.contains_key(k) {
            diffs.push((k.clone(), None, Some(*v)));
        }
    }
    diffs
}
