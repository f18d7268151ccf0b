//! Flat `key = value` experiment configuration.
//!
//! Lines are `namespace.key = value`, `#` starts a comment, blanks are
//! skipped.  Every key has a scenario-provided default, so an empty file is
//! valid; unknown keys and unparsable values are reported with their line
//! number instead of being ignored.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use attomirror::demodulation::FilterSpec;
use attomirror::model::{self, EnvironmentParams, FeedbackConfig, FeedbackMode, OscillatorParams};
use attomirror::readout::{OpticalParams, VoltageCalibration};
use attomirror::simulator::{Integrator, ReadoutChain, SimConfig};

/// One `key = value` assignment with its source line for diagnostics.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Split a config file into assignments without interpreting them.
pub fn parse_file(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        match stripped.split_once('=') {
            Some((key, value)) => entries.push(Entry {
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                line,
            }),
            None => anyhow::bail!(
                "{}:{line}: expected `key = value`, got `{stripped}`",
                path.display()
            ),
        }
    }
    Ok(entries)
}

/// Fully resolved parameter set: scenario defaults with config overrides
/// applied.  Frequencies are in Hz here (the interface unit); the core
/// crate's rad/s conversions happen in the build methods.
#[derive(Debug, Clone)]
pub struct Settings {
    pub frequency_hz: f64,
    pub quality: f64,
    pub mass_kg: f64,
    pub temperature_k: f64,
    pub mode: FeedbackMode,
    pub gain: f64,
    pub modulation_phase_rad: f64,
    pub saturation_power_w: Option<f64>,
    pub gain_list: Vec<f64>,
    pub integrator: Integrator,
    pub time_step_s: f64,
    pub duration_s: f64,
    pub output_period_s: f64,
    pub full_scale_m: f64,
    pub readout_noise: bool,
    pub finesse: f64,
    pub wavelength_m: f64,
    pub cavity_length_m: f64,
    pub noise_floor_m_rthz: f64,
    pub calibration_volts: f64,
    pub calibration_hz: f64,
    pub bandpass_center_hz: f64,
    pub bandpass_width_hz: f64,
    pub lowpass_cutoff_hz: f64,
    pub lowpass_order: u8,
}

impl Settings {
    /// Apply config assignments on top of the defaults, collecting one
    /// diagnostic per unknown key or unparsable value.
    pub fn apply(&mut self, entries: &[Entry]) -> Vec<String> {
        let mut diagnostics = Vec::new();
        for e in entries {
            if let Err(problem) = self.apply_one(e) {
                diagnostics.push(format!("line {}: {problem}", e.line));
            }
        }
        diagnostics
    }

    fn apply_one(&mut self, e: &Entry) -> std::result::Result<(), String> {
        let num = || -> std::result::Result<f64, String> {
            e.value
                .parse::<f64>()
                .map_err(|_| format!("{}: expected a number, got `{}`", e.key, e.value))
        };
        match e.key.as_str() {
            "oscillator.frequency_hz" => self.frequency_hz = num()?,
            "oscillator.quality" => self.quality = num()?,
            "oscillator.mass_kg" => self.mass_kg = num()?,
            "environment.temperature_k" => self.temperature_k = num()?,
            "feedback.mode" => {
                self.mode = match e.value.as_str() {
                    "off" => FeedbackMode::Off,
                    "cold_damp" => FeedbackMode::ColdDamp,
                    "parametric_viscous" => FeedbackMode::ParametricViscous,
                    "parametric_spring" => FeedbackMode::ParametricSpring,
                    other => {
                        return Err(format!(
                            "feedback.mode: expected off|cold_damp|parametric_viscous|parametric_spring, got `{other}`"
                        ))
                    }
                }
            }
            "feedback.gain" => self.gain = num()?,
            "feedback.modulation_phase_rad" => self.modulation_phase_rad = num()?,
            "feedback.saturation_power_w" => self.saturation_power_w = Some(num()?),
            "feedback.gain_list" => {
                let mut list = Vec::new();
                for part in e.value.split(',') {
                    list.push(part.trim().parse::<f64>().map_err(|_| {
                        format!(
                            "feedback.gain_list: expected comma-separated numbers, got `{}`",
                            e.value
                        )
                    })?);
                }
                self.gain_list = list;
            }
            "sim.integrator" => {
                self.integrator = match e.value.as_str() {
                    "rotating" => Integrator::RotatingFrame,
                    "full_band" => Integrator::FullBand,
                    other => {
                        return Err(format!(
                            "sim.integrator: expected rotating|full_band, got `{other}`"
                        ))
                    }
                }
            }
            "sim.time_step_s" => self.time_step_s = num()?,
            "sim.duration_s" => self.duration_s = num()?,
            "sim.output_period_s" => self.output_period_s = num()?,
            "sim.full_scale_m" => self.full_scale_m = num()?,
            "sim.readout_noise" => {
                self.readout_noise = match e.value.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(format!(
                            "sim.readout_noise: expected true|false, got `{other}`"
                        ))
                    }
                }
            }
            "optics.finesse" => self.finesse = num()?,
            "optics.wavelength_m" => self.wavelength_m = num()?,
            "optics.cavity_length_m" => self.cavity_length_m = num()?,
            "optics.noise_floor_m_rthz" => self.noise_floor_m_rthz = num()?,
            "optics.calibration_volts" => self.calibration_volts = num()?,
            "optics.calibration_hz" => self.calibration_hz = num()?,
            "filter.bandpass_center_hz" => self.bandpass_center_hz = num()?,
            "filter.bandpass_width_hz" => self.bandpass_width_hz = num()?,
            "filter.lowpass_cutoff_hz" => self.lowpass_cutoff_hz = num()?,
            "filter.lowpass_order" => {
                self.lowpass_order = e.value.parse::<u8>().map_err(|_| {
                    format!("filter.lowpass_order: expected a small integer, got `{}`", e.value)
                })?
            }
            unknown => return Err(format!("unknown key `{unknown}`")),
        }
        Ok(())
    }

    pub fn oscillator(&self) -> Result<OscillatorParams> {
        OscillatorParams::new(TAU * self.frequency_hz, self.quality, self.mass_kg)
            .context("oscillator")
    }

    pub fn environment(&self) -> Result<EnvironmentParams> {
        EnvironmentParams::new(self.temperature_k).context("environment")
    }

    pub fn feedback(&self) -> Result<FeedbackConfig> {
        let mut feedback = FeedbackConfig {
            mode: self.mode,
            gain: self.gain,
            modulation_phase: self.modulation_phase_rad,
            saturation_force: None,
        };
        if let Some(power) = self.saturation_power_w {
            feedback.saturation_force =
                Some(model::saturation_force(power).context("feedback.saturation_power_w")?);
        }
        feedback.validate().context("feedback")?;
        Ok(feedback)
    }

    pub fn optics(&self) -> Result<OpticalParams> {
        OpticalParams::new(
            self.finesse,
            self.wavelength_m,
            self.cavity_length_m,
            self.noise_floor_m_rthz,
            VoltageCalibration {
                frequency_shift: self.calibration_hz,
                response_volts: self.calibration_volts,
            },
        )
        .context("optics")
    }

    pub fn filter(&self) -> Result<FilterSpec> {
        let filter = FilterSpec {
            bandpass_center: TAU * self.bandpass_center_hz,
            bandpass_width: TAU * self.bandpass_width_hz,
            lowpass_cutoff: TAU * self.lowpass_cutoff_hz,
            lowpass_order: self.lowpass_order,
        };
        filter.validate().context("filter")?;
        Ok(filter)
    }

    /// Assemble and validate the complete simulation configuration.
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let config = SimConfig {
            integrator: self.integrator,
            time_step: self.time_step_s,
            duration: self.duration_s,
            output_sample_period: self.output_period_s,
            seed,
            oscillator: self.oscillator()?,
            environment: self.environment()?,
            feedback: self.feedback()?,
            readout: Some(ReadoutChain {
                optics: self.optics()?,
                filter: self.filter()?,
                with_noise: self.readout_noise,
            }),
        };
        config.validate().context("sim")?;
        Ok(config)
    }

    /// The full parameter set in config-file syntax, for `validate` output
    /// and the report header.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv(
            "oscillator.frequency_hz",
            format!("{:e}", self.frequency_hz),
        );
        kv("oscillator.quality", format!("{:e}", self.quality));
        kv("oscillator.mass_kg", format!("{:e}", self.mass_kg));
        kv(
            "environment.temperature_k",
            format!("{:e}", self.temperature_k),
        );
        kv(
            "feedback.mode",
            match self.mode {
                FeedbackMode::Off => "off",
                FeedbackMode::ColdDamp => "cold_damp",
                FeedbackMode::ParametricViscous => "parametric_viscous",
                FeedbackMode::ParametricSpring => "parametric_spring",
            }
            .to_string(),
        );
        kv("feedback.gain", format!("{:e}", self.gain));
        kv(
            "feedback.modulation_phase_rad",
            format!("{:e}", self.modulation_phase_rad),
        );
        if let Some(p) = self.saturation_power_w {
            kv("feedback.saturation_power_w", format!("{p:e}"));
        }
        if !self.gain_list.is_empty() {
            kv(
                "feedback.gain_list",
                self.gain_list
                    .iter()
                    .map(|g| format!("{g}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            );
        }
        kv(
            "sim.integrator",
            match self.integrator {
                Integrator::RotatingFrame => "rotating",
                Integrator::FullBand => "full_band",
            }
            .to_string(),
        );
        kv("sim.time_step_s", format!("{:e}", self.time_step_s));
        kv("sim.duration_s", format!("{:e}", self.duration_s));
        kv("sim.output_period_s", format!("{:e}", self.output_period_s));
        kv("sim.full_scale_m", format!("{:e}", self.full_scale_m));
        kv("sim.readout_noise", format!("{}", self.readout_noise));
        kv("optics.finesse", format!("{:e}", self.finesse));
        kv("optics.wavelength_m", format!("{:e}", self.wavelength_m));
        kv(
            "optics.cavity_length_m",
            format!("{:e}", self.cavity_length_m),
        );
        kv(
            "optics.noise_floor_m_rthz",
            format!("{:e}", self.noise_floor_m_rthz),
        );
        kv(
            "optics.calibration_volts",
            format!("{:e}", self.calibration_volts),
        );
        kv(
            "optics.calibration_hz",
            format!("{:e}", self.calibration_hz),
        );
        kv(
            "filter.bandpass_center_hz",
            format!("{:e}", self.bandpass_center_hz),
        );
        kv(
            "filter.bandpass_width_hz",
            format!("{:e}", self.bandpass_width_hz),
        );
        kv(
            "filter.lowpass_cutoff_hz",
            format!("{:e}", self.lowpass_cutoff_hz),
        );
        kv("filter.lowpass_order", format!("{}", self.lowpass_order));
        out
    }
}
