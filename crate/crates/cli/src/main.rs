//! Command-line front end for the cascaded noise-reduction / echo-
//! cancellation simulation toolkit.
//!
//! - `run <config.toml>` executes the experiment sweep (CSV results, figure
//!   data and per-scenario artifacts under the output directory).
//! - `verify` runs the analytic verification suite against closed-form
//!   oracles and exits non-zero if any check fails.
//! - `figures <results.csv>` re-derives the figure CSVs from existing
//!   results.
//! - `default-config` prints the built-in configuration as TOML.
//!
//! The output directory resolves as `--out` flag, then the `NRAEC_OUT_DIR`
//! environment variable, then the configuration file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nraec_core::experiment::{
    self, ExperimentConfig, FigureId, ResultsTable,
};
use nraec_core::verify;

const OUT_DIR_ENV: &str = "NRAEC_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "nraec",
    version,
    about = "Simulation toolkit comparing cascaded noise-reduction and echo-cancellation designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment sweep described by a TOML configuration file
    Run {
        /// Configuration file; keys left out fall back to the defaults
        /// shown by `default-config`
        config: PathBuf,
        /// Override one configuration key, e.g. `--set signals.duration_s=4`
        /// or `--set grid.lf=[128,1150]` (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (highest precedence)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the analytic verification suite and exit non-zero on failure
    Verify {
        /// Seed for the randomized trials
        #[arg(long, default_value_t = 0xA11C)]
        seed: u64,
    },
    /// Re-derive figure CSVs from an existing results file
    Figures {
        /// A results.csv produced by `run`
        results: PathBuf,
        /// Emit a single figure: nr_performance, aec_converged or
        /// aec_adaptive (default: all three)
        #[arg(long)]
        figure: Option<String>,
        /// Target directory (default: `figures/` next to the results file)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration as TOML
    DefaultConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, set, out } => cmd_run(&config, &set, out),
        Command::Verify { seed } => cmd_verify(seed),
        Command::Figures {
            results,
            figure,
            out,
        } => cmd_figures(&results, figure.as_deref(), out),
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Set one dotted key in a TOML document, parsing the value as TOML when
/// possible (numbers, arrays, booleans) and as a string otherwise.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form key=value"))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{part} in {key:?} is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn cmd_run(config_path: &Path, overrides: &[String], out_flag: Option<PathBuf>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))?;
    let mut document: toml::Table = toml::from_str(&text)
        .with_context(|| format!("cannot parse {}", config_path.display()))?;
    for assignment in overrides {
        apply_override(&mut document, assignment)?;
    }
    let merged = toml::to_string(&document).context("cannot re-serialize configuration")?;
    let mut cfg = ExperimentConfig::from_toml_str(&merged)
        .with_context(|| format!("invalid configuration {}", config_path.display()))?;

    if let Some(dir) = out_flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
        cfg.output.dir = dir;
    }

    log::info!(
        "sweep: {} scenarios x {} SNR x {} SER x {} designs x {} modes x {} canceller lengths -> {}",
        cfg.signals.scenario_count,
        cfg.grid.snr_db.len(),
        cfg.grid.ser_db.len(),
        cfg.grid.designs.len(),
        cfg.grid.modes.len(),
        cfg.grid.lf.len(),
        cfg.output.dir.display()
    );
    let table: ResultsTable = experiment::run_experiment(&cfg)?;
    println!(
        "wrote {} result rows, {} aggregate rows to {}",
        table.rows.len(),
        table.aggregates.len(),
        cfg.output.dir.display()
    );
    if table.failures > 0 {
        log::warn!(
            "{} grid points failed; see {}",
            table.failures,
            cfg.output.dir.join("errors.csv").display()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(seed: u64) -> Result<ExitCode> {
    let reports = verify::run_suite(seed)?;
    let mut all_passed = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<32} measured {:>12.4e}  tolerance {:>10.1e}  ({})",
            r.name, r.measured, r.tolerance, r.detail
        );
        all_passed &= r.passed();
    }
    if all_passed {
        println!("all {} checks passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::FAILURE)
    }
}

// ---------------------------------------------------------------------------
// figures
// ---------------------------------------------------------------------------

fn cmd_figures(results: &Path, figure: Option<&str>, out: Option<PathBuf>) -> Result<ExitCode> {
    let rows = experiment::read_results_csv(results)
        .with_context(|| format!("cannot read {}", results.display()))?;
    let out_dir = out
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join("figures"))
        })
        .unwrap_or_else(|| {
            results
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("figures")
        });
    let selected: Vec<FigureId> = match figure {
        Some(name) => vec![FigureId::from_name(name)?],
        None => FigureId::ALL.to_vec(),
    };
    for fig in selected {
        let path = out_dir.join(format!("figure_{}.csv", fig.as_str()));
        experiment::emit_figure_data(&rows, fig, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
