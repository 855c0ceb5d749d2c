//! `extremize`: runs the simulation study, the concrete case study, or a
//! standalone reliability diagram.
//!
//! Success prints the results as JSON on stdout and exits 0. Any failure
//! prints `{"error": kind, "message": ...}` on stderr and exits nonzero.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use extremize::evaluation::{DEFAULT_BINS, DEFAULT_BOOTSTRAP};
use extremize::experiment::{self, ConcreteConfig, DiagramConfig, Scenario, SimulateConfig};
use extremize::Error;
use serde_json::{json, Value};

const USAGE_EXIT: u8 = 2;
const FAILURE_EXIT: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "extremize", version, about = "Weighted-average and extremized forecast aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gaussian partial-information simulation study.
    Simulate(SimulateArgs),
    /// Concrete compressive-strength case study with k-fold cross validation.
    Concrete(ConcreteArgs),
    /// Reliability diagram of one forecast series read from `y,f` pairs.
    Diagram(DiagramArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of equal-count bins for diagrams and the binned decomposition.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Bootstrap replicates per reliability diagram.
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    /// Output directory; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// On a failed fit, write the offending QP as `qp_failure.json`.
    #[arg(long)]
    debug_qp: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10_000)]
    k_train: usize,
    #[arg(long, default_value_t = 10_000)]
    k_test: usize,
    /// `no-overlap`, `high-overlap`, or a structure JSON file.
    #[arg(long, default_value = "no-overlap")]
    scenario: Scenario,
}

#[derive(Debug, Args)]
struct ConcreteArgs {
    #[command(flatten)]
    common: Common,
    /// Concrete compressive-strength CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Share of each training fold used to fit the regression models.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
}

#[derive(Debug, Args)]
struct DiagramArgs {
    #[command(flatten)]
    common: Common,
    /// Two-column CSV of outcome and forecast, optional header.
    #[arg(long)]
    data: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({ "error": "UsageError", "message": e.kind().to_string(), "detail": e.to_string() });
            eprintln!("{record}");
            return ExitCode::from(USAGE_EXIT);
        }
    };
    let (common, result) = match &cli.command {
        Command::Simulate(a) => (&a.common, simulate(a)),
        Command::Concrete(a) => (&a.common, concrete(a)),
        Command::Diagram(a) => (&a.common, diagram(a)),
    };
    match result {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let mut record = json!({ "error": err.kind(), "message": err.to_string() });
            if common.debug_qp {
                if let Some(qp) = experiment::qp_failure_record(&err) {
                    let dir = common.out.as_deref().unwrap_or(Path::new("."));
                    let path = dir.join("qp_failure.json");
                    match write_record(&path, &qp) {
                        Ok(()) => record["qp_failure"] = json!(path.display().to_string()),
                        Err(e) => record["qp_failure_error"] = json!(e.to_string()),
                    }
                }
            }
            eprintln!("{record}");
            ExitCode::from(FAILURE_EXIT)
        }
    }
}

fn simulate(a: &SimulateArgs) -> Result<Value, Error> {
    let cfg = SimulateConfig {
        seed: a.common.seed,
        k_train: a.k_train,
        k_test: a.k_test,
        scenario: a.scenario.clone(),
        n_bins: a.common.bins,
        bootstrap_b: a.common.bootstrap,
        output_dir: a.common.out.clone(),
    };
    let report = experiment::run_simulate(&cfg)?;
    Ok(json!({
        "mode": "simulate",
        "scenario": cfg.scenario.label(),
        "extremized": report.extremized.record(),
        "weighted_average": report.weighted,
        "results": report.table,
    }))
}

fn concrete(a: &ConcreteArgs) -> Result<Value, Error> {
    let cfg = ConcreteConfig {
        seed: a.common.seed,
        folds: a.folds,
        split_ratio: a.split,
        n_bins: a.common.bins,
        bootstrap_b: a.common.bootstrap,
        output_dir: a.common.out.clone(),
    };
    let report = experiment::run_concrete_file(&cfg, &a.data)?;
    Ok(json!({
        "mode": "concrete",
        "rows": report.outcomes.len(),
        "results": report.table,
    }))
}

fn diagram(a: &DiagramArgs) -> Result<Value, Error> {
    let cfg = DiagramConfig {
        n_bins: a.common.bins,
        bootstrap_b: a.common.bootstrap,
        seed: a.common.seed,
        output_dir: a.common.out.clone(),
    };
    let report = experiment::run_diagram_file(&cfg, &a.data)?;
    Ok(json!({
        "mode": "diagram",
        "decomposition": report.decomposition,
        "bins": report.diagram.bins,
    }))
}

fn write_record(path: &Path, value: &Value) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}
