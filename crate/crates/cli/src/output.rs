//! File emission: trace, histogram, correlation, and report.
//!
//! The trace and histogram writers are deterministic down to the byte for a
//! given trajectory; everything environment-dependent (wall-clock time) is
//! confined to the report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use attomirror::analysis::{self, PhaseSpaceHistogram, HISTOGRAM_BINS};
use attomirror::QuadratureTrace;

use crate::config::Settings;
use crate::scenario::{Outcome, Scenario};

/// `time_s,x1_m,x2_m` rows at 17 significant digits, time rebuilt from the
/// row index so it never carries accumulated rounding.
pub fn render_trace(trace: &QuadratureTrace) -> String {
    let mut out = String::with_capacity(64 * trace.len() + 32);
    out.push_str("time_s,x1_m,x2_m\n");
    for (k, (x1, x2)) in trace.samples.iter().enumerate() {
        let t = k as f64 * trace.sample_period;
        let _ = writeln!(out, "{t:.16e},{x1:.16e},{x2:.16e}");
    }
    out
}

/// 256 rows of 256 space-separated counts, row = X2 bin ascending, column =
/// X1 bin ascending, prefixed by `#` comments recording the axes and totals.
pub fn render_histogram(hist: &PhaseSpaceHistogram) -> String {
    let mut out = String::with_capacity(4 * hist.cells.len() + 128);
    let _ = writeln!(out, "# full_scale_m = {:.16e}", hist.full_scale);
    let _ = writeln!(out, "# bins = {HISTOGRAM_BINS}");
    let _ = writeln!(out, "# total_count = {}", hist.total_count);
    let _ = writeln!(out, "# overflow_count = {}", hist.overflow_count);
    for row in hist.cells.chunks(HISTOGRAM_BINS) {
        let mut first = true;
        for &c in row {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{c}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Long-format correlation table: one `label,lag_s,value_m2` row per lag,
/// with each estimate's fit summarized in a leading comment.
pub fn render_correlations(
    correlations: &[(&'static str, analysis::CorrelationEstimate)],
) -> String {
    let mut out = String::new();
    for (label, est) in correlations {
        match (est.fitted_gamma, est.fitted_variance, est.fit_residual) {
            (Some(g), Some(v), Some(r)) => {
                let _ = writeln!(
                    out,
                    "# {label}: fitted_gamma_per_s = {g:.6e}, fitted_variance_m2 = {v:.6e}, fit_residual = {r:.3e}"
                );
            }
            _ => {
                let _ = writeln!(out, "# {label}: cross-correlation, no decay fit");
            }
        }
    }
    out.push_str("label,lag_s,value_m2\n");
    for (label, est) in correlations {
        for (tau, value) in est.lag_times.iter().zip(&est.values) {
            let _ = writeln!(out, "{label},{tau:.16e},{value:.16e}");
        }
    }
    out
}

pub fn render_report(
    scenario: Scenario,
    settings: &Settings,
    seed: u64,
    wall_clock: f64,
    outcome: &Outcome,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# scenario = {}", scenario.name());
    let _ = writeln!(out, "# seed = {seed}");
    let _ = writeln!(out, "# wall_clock_s = {wall_clock:.3}");
    let _ = writeln!(out, "# samples = {}", outcome.trace.len());
    for line in settings.render().lines() {
        let _ = writeln!(out, "# {line}");
    }
    for comment in &outcome.comments {
        let _ = writeln!(out, "# {comment}");
    }
    out.push_str(&outcome.render_checks());
    out
}

/// Write the full output set for one run into `dir`; returns the report
/// text so the caller can echo it.
pub fn write_all(
    dir: &Path,
    scenario: Scenario,
    settings: &Settings,
    seed: u64,
    wall_clock: f64,
    outcome: &Outcome,
) -> Result<String> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let hist = analysis::histogram(&outcome.trace, settings.full_scale_m)?;
    let report = render_report(scenario, settings, seed, wall_clock, outcome);
    let jobs: [(&str, String); 4] = [
        ("trace.csv", render_trace(&outcome.trace)),
        ("histogram.txt", render_histogram(&hist)),
        (
            "correlation.csv",
            render_correlations(&outcome.correlations),
        ),
        ("report.txt", report.clone()),
    ];
    for (name, content) in jobs {
        let path = dir.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}
