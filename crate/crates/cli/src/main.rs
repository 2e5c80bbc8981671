//! `gsvgd`: run experiments, check model gradients, audit blanket access
//! and sample the KSD null distribution.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use gsvgd::harness::{
    audit_experiment, builtin_model, ksd_null, write_outputs, ExperimentConfig, BUILTIN_MODELS,
};
use gsvgd::model::check_gradients;
use gsvgd::{run_experiment, stream, Stream};

use config::ConfigError;

/// Runs longer than this are flagged in the log.
const SOFT_BUDGET_SECONDS: f64 = 300.0;

#[derive(Parser)]
#[command(name = "gsvgd", version, about = "Graphical SVGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default: the config's `output`, else results/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic scores of a built-in model with finite differences.
    Gradcheck {
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random evaluation points.
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Check that every configured update reads only its allowed columns.
    Audit {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// U-statistic KSD of exact N(0, I) draws, global and local kernels.
    KsdNull {
        n: usize,
        seed: u64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file.
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    path: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "path")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of trials.
    #[arg(long)]
    trials: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let path = self.path.as_ref().or(self.config.as_ref()).expect("clap requires a path");
        let mut cfg = config::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, out } => config.load().map(|cfg| cmd_run(cfg, out.as_deref())),
        Command::Audit { config } => config.load().map(cmd_audit),
        Command::Gradcheck { model, seed, points, tol } => {
            if !BUILTIN_MODELS.contains(&model.as_str()) {
                eprintln!("error: unknown model '{model}'");
                eprintln!("built-in models: {}", BUILTIN_MODELS.join(", "));
                return ExitCode::from(2);
            }
            Ok(cmd_gradcheck(model, *seed, *points, *tol))
        }
        Command::KsdNull { n, seed, dim } => Ok(cmd_ksd_null(*n, *seed, *dim)),
    };
    match outcome {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => ExitCode::FAILURE,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, ConfigError::UnknownExperiment(_)) {
                eprintln!("known experiments: {}\n", config::experiment_names().join(", "));
                let _ = Cli::command().print_help();
            }
            ExitCode::from(2)
        }
    }
}

fn cmd_run(cfg: ExperimentConfig, out: Option<&Path>) -> Result<bool> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("results").join(cfg.experiment.name()));
    let started_at = chrono::Utc::now().to_rfc3339();
    let start = Instant::now();

    let result = run_experiment(&cfg).context("experiment failed")?;
    let rows = write_outputs(&result, &dir)
        .with_context(|| format!("cannot write results to {}", dir.display()))?;
    let wall = start.elapsed().as_secs_f64();

    let manifest = json!({
        "config": cfg,
        "versions": {
            "gsvgd": gsvgd::VERSION,
            "gsvgd-cli": env!("CARGO_PKG_VERSION"),
        },
        "started_at": started_at,
        "wall_seconds": wall,
        "rows_written": rows,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("cannot write {}", path.display()))?;

    println!("{}: {rows} rows in {:.1}s -> {}", cfg.experiment.name(), wall, dir.display());
    if wall > SOFT_BUDGET_SECONDS {
        eprintln!(
            "warning: run took {wall:.0}s, over the {SOFT_BUDGET_SECONDS:.0}s desk budget"
        );
    }
    Ok(true)
}

fn cmd_audit(cfg: ExperimentConfig) -> Result<bool> {
    let reports = audit_experiment(&cfg)?;
    let mut all = true;
    for (label, r) in &reports {
        all &= r.passed;
        println!(
            "{} {label}: {} {} max reads {} blanket-local {}",
            if r.passed { "ok  " } else { "FAIL" },
            r.algorithm.name(),
            r.kernel_variant,
            r.max_reads,
            r.blanket_local,
        );
    }
    Ok(all)
}

fn cmd_gradcheck(name: &str, seed: u64, points: usize, tol: f64) -> Result<bool> {
    let model = builtin_model(name, seed)?;
    let report = check_gradients(&model, points, tol, &mut stream(seed, Stream::Init))?;
    println!(
        "{name}: {} (dim {}, {} points, max relative error {:.2e}, tolerance {:.0e})",
        if report.passed { "pass" } else { "FAIL" },
        model.dim(),
        report.trials,
        report.max_error,
        report.tolerance,
    );
    Ok(report.passed)
}

fn cmd_ksd_null(n: usize, seed: u64, dim: usize) -> Result<bool> {
    for r in ksd_null(n, dim, seed)? {
        println!(
            "{:>6}: ksd2 {:+.3e}  se {:.3e}  z {:+.2}  {}",
            r.kernel,
            r.ksd2,
            r.stderr,
            r.z,
            if r.within_3se { "within 3 se" } else { "outside 3 se" },
        );
    }
    Ok(true)
}
