//! Browser bridge for the live phase-space demo.
//!
//! Three exports, kept deliberately narrow so the page stays a static file:
//! [`DemoSim`] steps the rotating-frame simulation in batches sized for one
//! animation frame, [`theory_stats`] hands the page the closed-form numbers
//! it overlays (spreads, dampings, effective temperature, lobe position),
//! and [`sweep_curves`] runs a short gain sweep and returns the normalized
//! variance and damping curves.
//!
//! All numeric traffic crosses the boundary as `Vec<f64>`/`Float64Array`;
//! errors cross as thrown strings.  The internal functions return
//! `Result<_, String>` so native unit tests never touch a JS value.

use attomirror::analysis::{self, QuadratureIndex};
use attomirror::model::{self, EnvironmentParams, FeedbackConfig, FeedbackMode, OscillatorParams};
use attomirror::simulator::{
    derive_trajectory_seed, run_experiment, Integrator, RotatingRun, SimConfig,
};
use wasm_bindgen::prelude::*;

/// Drive-power bound applied to parametric modes so the gain slider can
/// cross threshold without the variance diverging: half a watt of available
/// light pressure, the same order as the bench drive.
const SATURATION_POWER_W: f64 = 0.5;

/// Integration step: resolves quadrature relaxations up to gain ≈ 17 and
/// keeps the wall-clock cost of one simulated second constant.
const TIME_STEP_S: f64 = 1e-5;

fn feedback_for(mode: &str, gain: f64) -> Result<FeedbackConfig, String> {
    let feedback = match mode {
        "free" => FeedbackConfig::off(),
        "cold_damp" => FeedbackConfig::cold_damp(gain),
        "parametric_viscous" => {
            let force = model::saturation_force(SATURATION_POWER_W).map_err(|e| e.to_string())?;
            FeedbackConfig::parametric_viscous(gain).with_saturation(force)
        }
        other => {
            return Err(format!(
                "unknown feedback mode `{other}` (expected free, cold_damp, or parametric_viscous)"
            ))
        }
    };
    Ok(feedback)
}

fn demo_config(mode: &str, gain: f64, seed: u64, duration: f64) -> Result<SimConfig, String> {
    let feedback = feedback_for(mode, gain)?;
    let oscillator = OscillatorParams::fundamental_mode();
    // Stay well under the stability bound once the gain pushes the fast
    // relaxation rate past what the fixed step resolves.
    let fastest = oscillator.damping_rate() * (1.0 + gain.max(0.0));
    let time_step = TIME_STEP_S.min(1.0 / (25.0 * fastest));
    let config = SimConfig {
        integrator: Integrator::RotatingFrame,
        time_step,
        duration,
        output_sample_period: time_step,
        seed,
        oscillator,
        environment: EnvironmentParams::room(),
        feedback,
        readout: None,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Layout of [`theory_stats`]: indices into the returned array.
/// `[sigma1_m, sigma2_m, gamma1_per_s, gamma2_per_s, t_eff_k, lobe_m]`,
/// with NaN where the quantity is undefined for the mode/gain.
fn stats_for(mode: &str, gain: f64) -> Result<Vec<f64>, String> {
    let p = OscillatorParams::fundamental_mode();
    let env = EnvironmentParams::room();
    let feedback = feedback_for(mode, gain)?;
    let thermal = model::thermal_variance(&p, &env);
    let gamma = p.damping_rate();
    let stats = match feedback.mode {
        FeedbackMode::Off => {
            let sigma = thermal.sqrt();
            vec![sigma, sigma, gamma, gamma, env.temperature(), f64::NAN]
        }
        FeedbackMode::ColdDamp => {
            let sigma = (thermal / (1.0 + gain)).sqrt();
            let rate = gamma * (1.0 + gain);
            let t_eff = model::effective_temperature(&env, gain).map_err(|e| e.to_string())?;
            vec![sigma, sigma, rate, rate, t_eff, f64::NAN]
        }
        FeedbackMode::ParametricViscous | FeedbackMode::ParametricSpring => {
            let force = feedback
                .saturation_force
                .expect("parametric demo config carries a saturation force");
            let lobe = model::saturation_amplitude(&p, force).map_err(|e| e.to_string())?;
            if gain < 1.0 {
                let (v1, v2) =
                    model::parametric_variances(&p, &env, gain).map_err(|e| e.to_string())?;
                let (g1, g2) = model::effective_dampings(&p, gain).map_err(|e| e.to_string())?;
                // The lobe only materializes above threshold.
                vec![v1.sqrt(), v2.sqrt(), g1, g2, f64::NAN, f64::NAN]
            } else {
                let v1 = thermal / (1.0 + gain);
                vec![
                    v1.sqrt(),
                    f64::NAN,
                    gamma * (1.0 + gain),
                    f64::NAN,
                    f64::NAN,
                    lobe,
                ]
            }
        }
    };
    Ok(stats)
}

/// Normalized sweep rows `[v1/v_th, v2/v_th, gamma1/gamma, gamma2/gamma]`
/// per gain, from short independent trajectories.
fn sweep_for(gains: &[f64], seconds: f64, seed: u64) -> Result<Vec<f64>, String> {
    if seconds <= 0.0 || !seconds.is_finite() {
        return Err(format!("sweep duration must be positive, got {seconds}"));
    }
    let p = OscillatorParams::fundamental_mode();
    let env = EnvironmentParams::room();
    let thermal = model::thermal_variance(&p, &env);
    let gamma = p.damping_rate();
    let mut rows = Vec::with_capacity(4 * gains.len());
    for (index, &g) in gains.iter().enumerate() {
        if !(0.0..1.0).contains(&g) {
            return Err(format!(
                "sweep gains must lie in [0, 1) for a stationary variance, got {g}"
            ));
        }
        let config = SimConfig {
            time_step: 2e-5,
            output_sample_period: 5e-4,
            duration: seconds,
            seed: derive_trajectory_seed(seed, index as u64),
            feedback: FeedbackConfig::parametric_viscous(g),
            ..demo_config("free", 0.0, 0, seconds)?
        };
        config.validate().map_err(|e| e.to_string())?;
        let trace = run_experiment(&config).map_err(|e| e.to_string())?;
        let (d1, d2) = analysis::dispersions(&trace).map_err(|e| e.to_string())?;
        let fit = |which, rate: f64| -> Result<f64, String> {
            let max_lag = (6.0 / rate).min(seconds / 10.0);
            let corr =
                analysis::correlation(&trace, which, which, max_lag).map_err(|e| e.to_string())?;
            corr.fitted_gamma
                .ok_or_else(|| "autocorrelation fit produced no rate".to_string())
        };
        let g1 = fit(QuadratureIndex::X1, gamma * (1.0 + g))?;
        let g2 = fit(QuadratureIndex::X2, gamma * (1.0 - g))?;
        rows.extend_from_slice(&[d1 * d1 / thermal, d2 * d2 / thermal, g1 / gamma, g2 / gamma]);
    }
    Ok(rows)
}

/// Live rotating-frame simulation of the mirror mode, thermalised on
/// construction so the first batch already samples the stationary state.
#[wasm_bindgen]
pub struct DemoSim {
    run: RotatingRun,
    time_step: f64,
}

#[wasm_bindgen]
impl DemoSim {
    /// `mode` is `free`, `cold_damp`, or `parametric_viscous`; parametric
    /// gains at or above 1 are legal because the drive saturates.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, gain: f64, seed: u32) -> Result<DemoSim, JsError> {
        let config = demo_config(mode, gain, seed as u64, 1.0).map_err(|e| JsError::new(&e))?;
        let run = RotatingRun::new(&config).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(DemoSim {
            run,
            time_step: config.time_step,
        })
    }

    /// Advance `steps` integration steps, keeping every `stride`-th point:
    /// returns `[x1, x2, x1, x2, ...]` in meters.
    pub fn step_batch(&mut self, steps: u32, stride: u32) -> Vec<f64> {
        let stride = stride.max(1);
        let mut out = Vec::with_capacity(2 * (steps / stride + 1) as usize);
        for k in 0..steps {
            let (x1, x2) = self.run.step();
            if k % stride == 0 {
                out.push(x1);
                out.push(x2);
            }
        }
        out
    }

    /// Simulated seconds per integration step.
    pub fn time_step(&self) -> f64 {
        self.time_step
    }
}

/// Closed-form overlay numbers for the current mode and gain; see
/// [`stats_for`] for the array layout.
#[wasm_bindgen]
pub fn theory_stats(mode: &str, gain: f64) -> Result<Vec<f64>, JsError> {
    stats_for(mode, gain).map_err(|e| JsError::new(&e))
}

/// Measured gain-sweep curves, four values per gain; gains must lie below
/// threshold.
#[wasm_bindgen]
pub fn sweep_curves(gains: Vec<f64>, seconds: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    sweep_for(&gains, seconds, seed as u64).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THERMAL_SPREAD: f64 = 3.633115e-16;

    #[test]
    fn free_theory_matches_thermal_spread() {
        let stats = stats_for("free", 0.0).unwrap();
        assert!((stats[0] - THERMAL_SPREAD).abs() < 1e-20);
        assert_eq!(stats[0], stats[1]);
        assert!((stats[4] - 300.0).abs() < 1e-12);
        assert!(stats[5].is_nan());
    }

    #[test]
    fn batches_are_deterministic_for_a_seed() {
        let mut a = DemoSim::new("cold_damp", 2.0, 42).unwrap();
        let mut b = DemoSim::new("cold_damp", 2.0, 42).unwrap();
        assert_eq!(a.step_batch(1000, 10), b.step_batch(1000, 10));
    }

    #[test]
    fn free_batch_wanders_at_the_thermal_scale() {
        let mut sim = DemoSim::new("free", 0.0, 3).unwrap();
        // 40 s of motion, decimated: enough for a ~2% dispersion estimate.
        let samples = sim.step_batch(4_000_000, 100);
        let n = (samples.len() / 2) as f64;
        let v1 = samples.iter().step_by(2).map(|x| x * x).sum::<f64>() / n;
        assert!(
            (v1.sqrt() / THERMAL_SPREAD - 1.0).abs() < 0.1,
            "spread {:.3e}",
            v1.sqrt()
        );
    }

    #[test]
    fn saturated_run_sits_on_a_lobe() {
        let mut sim = DemoSim::new("parametric_viscous", 3.0, 7).unwrap();
        let stats = stats_for("parametric_viscous", 3.0).unwrap();
        let lobe = stats[5];
        assert!(lobe > 0.0);
        let samples = sim.step_batch(100_000, 10);
        let mean_abs_x2 = samples
            .iter()
            .skip(1)
            .step_by(2)
            .map(|x| x.abs())
            .sum::<f64>()
            / (samples.len() / 2) as f64;
        assert!(
            (mean_abs_x2 / lobe - 1.0).abs() < 0.15,
            "mean |x2| = {mean_abs_x2:.3e} vs lobe {lobe:.3e}"
        );
    }

    #[test]
    fn sweep_reproduces_the_contraction_and_splitting() {
        let rows = sweep_for(&[0.0, 0.8], 12.0, 11).unwrap();
        assert_eq!(rows.len(), 8);
        let [v1a, v2a, g1a, g2a, v1b, v2b, g1b, g2b] = rows[..] else {
            unreachable!()
        };
        for (measured, expected, tol) in [
            (v1a, 1.0, 0.10),
            (v2a, 1.0, 0.10),
            (g1a, 1.0, 0.15),
            (g2a, 1.0, 0.15),
            (v1b, 1.0 / 1.8, 0.10),
            (v2b, 5.0, 0.15),
            (g1b, 1.8, 0.15),
            (g2b, 0.2, 0.25),
        ] {
            assert!(
                (measured / expected - 1.0).abs() < tol,
                "measured {measured:.3} vs {expected:.3}"
            );
        }
    }

    #[test]
    fn unknown_mode_is_rejected() {
        let err = stats_for("bang_bang", 1.0).unwrap_err();
        assert!(err.contains("bang_bang"));
        assert!(feedback_for("spring", 0.5).is_err());
    }

    #[test]
    fn sweep_rejects_gains_at_threshold() {
        let err = sweep_for(&[1.0], 5.0, 0).unwrap_err();
        assert!(err.contains("stationary"), "{err}");
    }
}
