//! Closed-form predictions for the mirror mode: susceptibilities, thermal
//! noise levels, and the variance/damping budget under feedback.
//!
//! Everything downstream (simulator, demodulation, analysis, acceptance
//! tests) is checked against the formulas in this module, so it is kept
//! purely analytic — no RNG, no time series.
//!
//! # Spectral convention
//!
//! See [`SpectralConvention`]: double-sided densities in angular frequency,
//! `variance = (1/2π) ∫ S(ω) dω`.

use num_complex::Complex64;
use thiserror::Error;

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT};

/// Errors from constructing or evaluating the analytic model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} must be {requirement} (got {value})")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    /// Stationary parametric variances only exist below the oscillation
    /// threshold g = 1.
    #[error("parametric gain g = {0} is at or above the oscillation threshold g = 1")]
    AboveThreshold(f64),
}

fn require(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: f64,
) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            requirement,
            value,
        })
    }
}

/// Marker documenting the spectral convention shared by the whole crate.
///
/// All power spectral densities are double-sided functions of *angular*
/// frequency ω, normalized so that `variance = (1/2π) ∫ S(ω) dω`.
/// Consequences used throughout:
///
/// - the Langevin force on the mode is white, `S_T = 2 M Γ k_B T`;
/// - each force quadrature in the rotating frame is white with
///   `S_T1 = S_T2 = 2 S_T`, the two being uncorrelated;
/// - the free in-phase quadrature has
///   `S_X1(ω) = Γ k_B T / (M Ω_M² (ω² + Γ²/4))`,
///   which integrates back to the thermal variance `k_B T / (M Ω_M²)`.
pub struct SpectralConvention;

/// Mechanical parameters of the observed mirror mode.
///
/// The damping rate Γ = Ω_M / Q is derived at construction and kept
/// consistent with the other fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    angular_frequency: f64,
    quality_factor: f64,
    mass: f64,
    damping_rate: f64,
}

impl OscillatorParams {
    /// Build from the resonance angular frequency Ω_M (rad/s), quality factor
    /// Q (dimensionless) and effective mass M (kg).
    pub fn new(angular_frequency: f64, quality_factor: f64, mass: f64) -> Result<Self, ModelError> {
        require(
            angular_frequency > 0.0,
            "angular_frequency",
            "positive",
            angular_frequency,
        )?;
        require(
            quality_factor >= 1.0,
            "quality_factor",
            ">= 1",
            quality_factor,
        )?;
        require(mass > 0.0, "mass", "positive", mass)?;
        Ok(Self {
            angular_frequency,
            quality_factor,
            mass,
            damping_rate: angular_frequency / quality_factor,
        })
    }

    /// Fundamental mode of the plano-convex mirror resonator studied
    /// throughout: Ω_M/2π = 1859 kHz, Q = 44 000, M = 230 mg.
    pub fn fundamental_mode() -> Self {
        Self::new(std::f64::consts::TAU * 1.859e6, 4.4e4, 2.3e-4).expect("valid preset")
    }

    /// Slow test mode (Ω_M/2π = 10 kHz, Q = 100, same mass) that makes
    /// full-band integration cheap enough for cross-checks against the
    /// rotating-frame integrator.
    pub fn scaled_mode() -> Self {
        Self::new(std::f64::consts::TAU * 1.0e4, 100.0, 2.3e-4).expect("valid preset")
    }

    /// Resonance angular frequency Ω_M (rad/s).
    pub fn angular_frequency(&self) -> f64 {
        self.angular_frequency
    }

    /// Quality factor Q.
    pub fn quality_factor(&self) -> f64 {
        self.quality_factor
    }

    /// Effective mass M (kg).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Viscous damping rate Γ = Ω_M / Q (rad/s).
    pub fn damping_rate(&self) -> f64 {
        self.damping_rate
    }
}

/// Thermal environment of the mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentParams {
    temperature: f64,
}

impl EnvironmentParams {
    /// Bath temperature in kelvin (zero allowed: noiseless dynamics).
    pub fn new(temperature: f64) -> Result<Self, ModelError> {
        require(temperature >= 0.0, "temperature", ">= 0", temperature)?;
        Ok(Self { temperature })
    }

    /// Room temperature, 300 K.
    pub fn room() -> Self {
        Self { temperature: 300.0 }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Which feedback force is applied to the mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// No feedback: free Brownian motion.
    Off,
    /// Viscous cold damping, F = -g M Γ ẋ.
    ColdDamp,
    /// Parametric modulation of the damping, F = 2 g M Γ cos(2Ω_M t + ψ) ẋ.
    ParametricViscous,
    /// Parametric modulation of the spring, F = 2 g M Γ Ω_M cos(2Ω_M t + ψ) x.
    ParametricSpring,
}

/// Feedback loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackConfig {
    pub mode: FeedbackMode,
    /// Dimensionless gain g (ignored when mode is `Off`).
    pub gain: f64,
    /// Phase ψ of the 2Ω_M modulation relative to the demodulation reference
    /// (radians).  ψ = 0 aligns the parametric damping so that X1 is cooled.
    pub modulation_phase: f64,
    /// Optional actuator saturation: largest feedback force magnitude the
    /// drive can deliver (newtons).  Required to run parametric feedback at
    /// or above threshold.
    pub saturation_force: Option<f64>,
}

impl FeedbackConfig {
    pub fn off() -> Self {
        Self {
            mode: FeedbackMode::Off,
            gain: 0.0,
            modulation_phase: 0.0,
            saturation_force: None,
        }
    }

    pub fn cold_damp(gain: f64) -> Self {
        Self {
            mode: FeedbackMode::ColdDamp,
            gain,
            modulation_phase: 0.0,
            saturation_force: None,
        }
    }

    pub fn parametric_viscous(gain: f64) -> Self {
        Self {
            mode: FeedbackMode::ParametricViscous,
            gain,
            modulation_phase: 0.0,
            saturation_force: None,
        }
    }

    pub fn parametric_spring(gain: f64) -> Self {
        Self {
            mode: FeedbackMode::ParametricSpring,
            gain,
            modulation_phase: 0.0,
            saturation_force: None,
        }
    }

    pub fn with_saturation(mut self, max_force: f64) -> Self {
        self.saturation_force = Some(max_force);
        self
    }

    /// Field-level validity (gain sign, saturation force positivity).
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mode != FeedbackMode::Off {
            require(self.gain >= 0.0, "gain", ">= 0", self.gain)?;
        }
        require(
            self.modulation_phase.is_finite(),
            "modulation_phase",
            "finite",
            self.modulation_phase,
        )?;
        if let Some(f) = self.saturation_force {
            require(f > 0.0, "saturation_force", "positive", f)?;
        }
        Ok(())
    }
}

/// Mechanical susceptibility χ(ω) = 1 / [M (Ω_M² − ω² − iΓω)], in m/N.
pub fn susceptibility(p: &OscillatorParams, omega: f64) -> Complex64 {
    let d = Complex64::new(
        p.angular_frequency * p.angular_frequency - omega * omega,
        -p.damping_rate * omega,
    );
    d.scale(p.mass).finv()
}

/// Closed-loop susceptibility under cold damping: the viscous term is scaled
/// by (1 + g), leaving resonance frequency and mass untouched.
pub fn feedback_susceptibility(
    p: &OscillatorParams,
    gain: f64,
    omega: f64,
) -> Result<Complex64, ModelError> {
    require(gain >= 0.0, "gain", ">= 0", gain)?;
    let d = Complex64::new(
        p.angular_frequency * p.angular_frequency - omega * omega,
        -(1.0 + gain) * p.damping_rate * omega,
    );
    Ok(d.scale(p.mass).finv())
}

/// White Langevin-force density S_T = 2 M Γ k_B T (N²·s) driving the mode.
pub fn langevin_force_psd(p: &OscillatorParams, env: &EnvironmentParams) -> f64 {
    2.0 * p.mass * p.damping_rate * BOLTZMANN * env.temperature
}

/// Thermal variance of either quadrature (and of the position itself),
/// ΔX² = k_B T / (M Ω_M²), in m².
pub fn thermal_variance(p: &OscillatorParams, env: &EnvironmentParams) -> f64 {
    BOLTZMANN * env.temperature / (p.mass * p.angular_frequency * p.angular_frequency)
}

/// Effective mode temperature under cold damping, T_eff = T / (1 + g).
pub fn effective_temperature(env: &EnvironmentParams, gain: f64) -> Result<f64, ModelError> {
    require(gain > -1.0, "gain", "> -1", gain)?;
    Ok(env.temperature / (1.0 + gain))
}

/// Quadrature damping rates under parametric feedback:
/// Γ₁ = Γ(1 + g) for the cooled quadrature, Γ₂ = Γ(1 − g) for the amplified
/// one.  For g > 1 the second rate is negative (anti-damped) and is returned
/// as such; stationary formulas no longer apply there.
pub fn effective_dampings(p: &OscillatorParams, gain: f64) -> Result<(f64, f64), ModelError> {
    require(gain >= 0.0, "gain", ">= 0", gain)?;
    Ok((p.damping_rate * (1.0 + gain), p.damping_rate * (1.0 - gain)))
}

/// Stationary quadrature variances under parametric feedback below
/// threshold: ΔX_i² = ΔX² · Γ / Γ_i.  Defined for 0 ≤ g < 1 only.
pub fn parametric_variances(
    p: &OscillatorParams,
    env: &EnvironmentParams,
    gain: f64,
) -> Result<(f64, f64), ModelError> {
    require(gain >= 0.0, "gain", ">= 0", gain)?;
    if gain >= 1.0 {
        return Err(ModelError::AboveThreshold(gain));
    }
    let v = thermal_variance(p, env);
    Ok((v / (1.0 + gain), v / (1.0 - gain)))
}

/// Model autocorrelation of a stationary quadrature,
/// C(τ) = V · exp(−Γ_eff |τ| / 2).
pub fn autocorrelation_model(variance: f64, gamma_eff: f64, tau: f64) -> f64 {
    variance * (-gamma_eff * tau.abs() / 2.0).exp()
}

/// Largest feedback force a radiation-pressure drive of mean power P can
/// deliver at the mechanical resonance: the fully saturated intensity
/// modulation is a square wave, so the force component at Ω_M is
/// F_max = (2P/c)(4/π), in newtons.
pub fn saturation_force(power: f64) -> Result<f64, ModelError> {
    require(power > 0.0, "power", "positive", power)?;
    Ok((2.0 * power / SPEED_OF_LIGHT) * (4.0 / std::f64::consts::PI))
}

/// Steady-state amplitude of the parametric oscillation locked on the X2
/// quadrature once the drive is saturated: ⟨X2⟩ = F_max / (M Γ Ω_M), meters.
pub fn saturation_amplitude(p: &OscillatorParams, max_force: f64) -> Result<f64, ModelError> {
    require(max_force > 0.0, "max_force", "positive", max_force)?;
    Ok(max_force / (p.mass * p.damping_rate * p.angular_frequency))
}
