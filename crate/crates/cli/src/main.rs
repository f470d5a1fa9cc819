use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

/// Fit, predict and simulate with the longitudinal endogenous-treatment
/// model.
///
/// Exit status: 0 success, 1 invalid input or configuration, 2 numerical
/// failure (non-convergence, singular information).
#[derive(Debug, Parser)]
#[command(name = "lem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a long-format CSV and write fit.json.
    Fit(FitArgs),
    /// Run a replicate simulation study and write summary tables.
    Simulate(SimulateArgs),
    /// Predict the natural-history mean along a grid from a saved fit.
    Predict(PredictArgs),
    /// Write a synthetic longitudinal data set with a nonlinear age trend.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Lem,
    GeeAdjusted,
    GeeExcluded,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RhoMapArg {
    Logistic,
    Arctan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Sim1,
    Sim2,
    Sim3,
    Sim4,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Long-format CSV, one row per subject visit.
    #[arg(long)]
    data: PathBuf,
    /// JSON column mapping: subject, time, outcome, treatment, x, z, w.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "lem")]
    method: MethodArg,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    rho_map: RhoMapArg,
    /// Fail instead of warning when the arms' outcome ranges do not overlap.
    #[arg(long)]
    strict_overlap: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in design: sim1 (complete panel), sim2 (MCAR visits),
    /// sim3 (covariate-dependent), sim4 (outcome-dependent missingness).
    #[arg(long, value_enum, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<PresetArg>,
    /// JSON simulation configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_subjects: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["lem", "gee-adjusted"])]
    methods: Vec<MethodArg>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// fit.json written by `lem fit`.
    #[arg(long)]
    fit: PathBuf,
    /// `start:end:count`, or a CSV file whose `--grid-column` (default: the
    /// first column) holds the grid.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    grid_column: Option<String>,
    /// Natural-spline knots, comma separated. With knots the grid fills the
    /// columns `<variable>_ns1 …`; without, the column `<variable>`.
    #[arg(long, value_delimiter = ',')]
    knots: Option<Vec<f64>>,
    #[arg(long, default_value = "age")]
    variable: String,
    /// Fixed values for the remaining X columns, `name=value`.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_subjects: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Demo(a) => commands::demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
