//! End-to-end checks of the binary: scenario runs, file formats,
//! determinism, config validation, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attomirror"))
}

fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

/// Fresh scratch directory, unique per test, wiped on entry.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("attomirror-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn free_run_is_deterministic_and_passes() {
    let dir_a = scratch("det-a");
    let dir_b = scratch("det-b");
    let config = repo_config("default.conf");
    for dir in [&dir_a, &dir_b] {
        let out = run_cli(&[
            "run",
            "--scenario",
            "free",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "free run failed:\n{}", stdout(&out));
    }
    for name in ["trace.csv", "histogram.txt"] {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // Thermal spread within 5% of 3.63e-16 m, stated by the report itself.
    let report = fs::read_to_string(dir_a.join("report.txt")).unwrap();
    for metric in [
        "delta_x1_m",
        "delta_x2_m",
        "gamma_x1_per_s",
        "gamma_x2_per_s",
    ] {
        let line = report
            .lines()
            .find(|l| l.starts_with(metric))
            .unwrap_or_else(|| panic!("report lacks {metric}:\n{report}"));
        assert!(line.ends_with("PASS"), "{line}");
    }
    let delta = report
        .lines()
        .find(|l| l.starts_with("delta_x1_m"))
        .unwrap();
    let measured: f64 = delta
        .split('=')
        .nth(1)
        .unwrap()
        .split('|')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((measured - 3.633e-16).abs() / 3.633e-16 < 0.05);
}

#[test]
fn trace_file_has_header_and_full_precision() {
    let dir = scratch("trace-format");
    let out = run_cli(&[
        "run",
        "--scenario",
        "free",
        "--seed",
        "2",
        "--duration",
        "0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    // Half a second is plenty for format checks but not for the decay fits,
    // so the run may legitimately report a FAIL row.
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("time_s,x1_m,x2_m"));
    let first = lines.next().expect("at least one sample row");
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields.len(), 3);
    for f in &fields {
        // 16 digits after the decimal point: at least 15 significant digits.
        let mantissa = f.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.len(), 18, "field {f} too short for 15 digits");
        f.parse::<f64>().expect("numeric field");
    }
    assert_eq!(trace.lines().count(), 1 + 500);
}

#[test]
fn histogram_file_shape_and_totals() {
    let dir = scratch("hist-format");
    let out = run_cli(&[
        "run",
        "--scenario",
        "free",
        "--seed",
        "3",
        "--duration",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let text = fs::read_to_string(dir.join("histogram.txt")).unwrap();
    let (comments, rows): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with('#'));
    assert!(comments.iter().any(|l| l.starts_with("# full_scale_m = ")));
    let total: u64 = comments
        .iter()
        .find_map(|l| l.strip_prefix("# total_count = "))
        .unwrap()
        .parse()
        .unwrap();
    let overflow: u64 = comments
        .iter()
        .find_map(|l| l.strip_prefix("# overflow_count = "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(rows.len(), 256);
    let mut counted = 0u64;
    for row in &rows {
        let cells: Vec<u64> = row.split(' ').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 256);
        counted += cells.iter().sum::<u64>();
    }
    assert_eq!(counted + overflow, total);
    assert_eq!(total, 2000);
}

#[test]
fn degenerate_duration_yields_single_row_and_flag() {
    let dir = scratch("degenerate");
    let out = run_cli(&[
        "run",
        "--scenario",
        "free",
        "--seed",
        "1",
        "--duration",
        "1e-3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    // Nothing to check, nothing failed: the run is valid, just flagged.
    assert!(out.status.success());
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "header plus exactly one sample");
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("insufficient statistics"));
}

#[test]
fn feedback_reports_cover_their_quantities() {
    for (scenario, metrics) in [
        (
            "cold-damp",
            &[
                "variance_ratio",
                "gamma_x1_per_s",
                "gamma_x2_per_s",
                "effective_temperature_k",
            ][..],
        ),
        (
            "param-below",
            &[
                "v1_over_thermal",
                "v2_over_thermal",
                "gamma_x1_per_s",
                "gamma_x2_per_s",
            ][..],
        ),
        (
            "param-above",
            &["mean_abs_x2_m", "x1_variance_over_thermal", "# lobe_jumps"][..],
        ),
    ] {
        let dir = scratch(scenario);
        let out = run_cli(&[
            "run",
            "--scenario",
            scenario,
            "--seed",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{scenario} failed:\n{}", stdout(&out));
        let report = fs::read_to_string(dir.join("report.txt")).unwrap();
        for metric in metrics {
            assert!(report.contains(metric), "{scenario} report lacks {metric}");
        }
    }
}

#[test]
fn gain_sweep_single_gain_override() {
    let dir = scratch("sweep");
    let out = run_cli(&[
        "run",
        "--scenario",
        "gain-sweep",
        "--seed",
        "4",
        "--gain",
        "0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    for metric in [
        "v1_over_thermal[g=0.5]",
        "v2_over_thermal[g=0.5]",
        "gamma1_over_gamma[g=0.5]",
        "gamma2_over_gamma[g=0.5]",
    ] {
        assert!(report.contains(metric), "missing {metric}:\n{report}");
    }
}

#[test]
fn noise_floor_matches_chain_prediction() {
    let dir = scratch("floor");
    let out = run_cli(&[
        "run",
        "--scenario",
        "noise-floor",
        "--seed",
        "1",
        "--duration",
        "0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    let line = report
        .lines()
        .find(|l| l.starts_with("noise_floor_m"))
        .expect("noise_floor_m row");
    assert!(line.ends_with("PASS"), "{line}");
}

#[test]
fn config_overrides_flow_into_the_run() {
    let dir = scratch("override");
    let conf = dir.join("cool.conf");
    fs::create_dir_all(&dir).unwrap();
    fs::write(
        &conf,
        "environment.temperature_k = 77\nsim.duration_s = 20\n",
    )
    .unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        "free",
        "--seed",
        "5",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("# environment.temperature_k = 7.7e1"));
    // Thermal spread scales with sqrt(T): 300 K -> 77 K halves it.
    let measured: f64 = report
        .lines()
        .find(|l| l.starts_with("delta_x1_m"))
        .unwrap()
        .split('=')
        .nth(1)
        .unwrap()
        .split('|')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let expected = 3.633e-16 * (77.0f64 / 300.0).sqrt();
    assert!((measured - expected).abs() / expected < 0.05);
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["default.conf", "scaled_full_band.conf"] {
        let out = run_cli(&["validate", "--config", repo_config(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name} should validate");
        let text = stdout(&out);
        assert!(text.contains("oscillator.frequency_hz"));
        assert!(text.contains("no problems found"), "{text}");
    }
}

#[test]
fn validate_reports_unknown_keys_and_invariants() {
    let dir = scratch("validate-bad");
    fs::create_dir_all(&dir).unwrap();
    let conf = dir.join("bad.conf");
    fs::write(
        &conf,
        "oscillator.qality = 4e4\n\
         feedback.mode = parametric_viscous\n\
         feedback.gain = 1.2\n\
         sim.time_step_s = oops\n",
    )
    .unwrap();
    let out = run_cli(&["validate", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(
        text.contains("line 1: unknown key `oscillator.qality`"),
        "{text}"
    );
    assert!(text.contains("line 4"), "{text}");
    assert!(
        text.contains("at or above threshold"),
        "missing gain invariant:\n{text}"
    );
}

#[test]
fn validate_cites_full_band_stability_bound() {
    let dir = scratch("validate-dt");
    fs::create_dir_all(&dir).unwrap();
    let conf = dir.join("dt.conf");
    fs::write(
        &conf,
        "sim.integrator = full_band\nsim.time_step_s = 1e-4\n",
    )
    .unwrap();
    let out = run_cli(&["validate", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("stability bound"));
}

#[test]
fn run_rejects_bad_config_without_writing() {
    let dir = scratch("run-bad");
    fs::create_dir_all(&dir).unwrap();
    let conf = dir.join("bad.conf");
    fs::write(&conf, "nonsense\n").unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        "free",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("out").exists());
}
