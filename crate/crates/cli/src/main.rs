//! Scenario runner for the mirror-mode simulator.
//!
//! `run` executes one of the preset experiments (free motion, cold damping,
//! parametric feedback below/above threshold, a gain sweep, or the readout
//! noise floor), writes the trajectory, phase-space histogram, correlation
//! table, and a theory-vs-measurement report, and exits nonzero when any
//! check misses its tolerance.  `validate` resolves a config file against
//! the defaults and lists every problem it can find without running.

mod config;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "attomirror",
    version,
    about = "Mirror-mode feedback experiments on the command line"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace, histogram, correlation, and report files.
    Run {
        #[arg(long, value_enum)]
        scenario: Scenario,
        /// Config file with `key = value` overrides on the scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; everything downstream derives from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Simulated duration override (seconds).
        #[arg(long)]
        duration: Option<f64>,
        /// Feedback gain override; for gain_sweep, replaces the whole list.
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Check a config file and print the fully resolved parameter set.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            config,
            seed,
            out,
            duration,
            gain,
        } => cmd_run(scenario, config.as_deref(), seed, &out, duration, gain),
        Command::Validate { config } => cmd_validate(&config),
    }
}

fn cmd_run(
    scenario: Scenario,
    config: Option<&std::path::Path>,
    seed: u64,
    out: &std::path::Path,
    duration: Option<f64>,
    gain: Option<f64>,
) -> Result<ExitCode> {
    let mut settings = scenario.defaults();
    if let Some(path) = config {
        let entries = config::parse_file(path)?;
        let diagnostics = settings.apply(&entries);
        if !diagnostics.is_empty() {
            for d in &diagnostics {
                eprintln!("{}: {d}", path.display());
            }
            bail!(
                "{} invalid config entr{}",
                diagnostics.len(),
                if diagnostics.len() == 1 { "y" } else { "ies" }
            );
        }
    }
    if let Some(d) = duration {
        settings.duration_s = d;
    }
    if let Some(g) = gain {
        settings.gain = g;
        if scenario == Scenario::GainSweep {
            settings.gain_list = vec![g];
        }
    }

    let started = Instant::now();
    let outcome = scenario::run_scenario(scenario, &settings, seed)
        .with_context(|| format!("running scenario {}", scenario.name()))?;
    let wall_clock = started.elapsed().as_secs_f64();

    let report = output::write_all(out, scenario, &settings, seed, wall_clock, &outcome)?;
    print!("{report}");
    println!("# files written to {}", out.display());
    Ok(if outcome.failed() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

/// Resolve the file against the free-scenario defaults and report unknown
/// keys, unparsable values, and violated model invariants, then print the
/// complete parameter set the run would use.
fn cmd_validate(path: &std::path::Path) -> Result<ExitCode> {
    let entries = config::parse_file(path)?;
    let mut settings = Scenario::Free.defaults();
    let mut diagnostics = settings.apply(&entries);
    if let Err(err) = settings.sim_config(0) {
        diagnostics.push(format!("{err:#}"));
    }
    println!("# resolved configuration ({})", path.display());
    print!("{}", settings.render());
    if diagnostics.is_empty() {
        println!("# no problems found");
        Ok(ExitCode::SUCCESS)
    } else {
        for d in &diagnostics {
            println!("error: {d}");
        }
        Ok(ExitCode::FAILURE)
    }
}
