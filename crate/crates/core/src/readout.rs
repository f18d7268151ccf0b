//! Optical readout: mirror displacement to homodyne phase, plus the
//! interferometer calibrations.
//!
//! A displacement x of the mirror shifts the phase of the field reflected by
//! the high-finesse cavity by δφ = (8F/λ)·x.  The measurement adds a white
//! phase background quoted as an equivalent displacement density δx_min
//! (m/√Hz).  Two calibrations tie the electronics to meters: a known laser
//! frequency modulation Δν mimics a displacement Δx = L·Δν/ν, and the
//! recorded output voltage for that modulation pins the volts-per-meter
//! scale.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::constants::SPEED_OF_LIGHT;
use crate::trace::PositionTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadoutError {
    #[error("{name} must be {requirement} (got {value})")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("sample rate {rate_hz:.3e} Hz undersamples the carrier {carrier_hz:.3e} Hz (need >= 10 samples per cycle)")]
    Undersampled { rate_hz: f64, carrier_hz: f64 },
}

fn require(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: f64,
) -> Result<(), ReadoutError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ReadoutError::InvalidParameter {
            name,
            requirement,
            value,
        })
    }
}

/// One calibration point: a laser frequency modulation of `frequency_shift`
/// (Hz) produced `response_volts` (V) at the analysis output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageCalibration {
    pub frequency_shift: f64,
    pub response_volts: f64,
}

/// Interferometer parameters and derived calibration scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalParams {
    finesse: f64,
    wavelength: f64,
    cavity_length: f64,
    sensitivity_floor: f64,
    volt_per_meter: f64,
}

impl OpticalParams {
    /// `finesse` (dimensionless), `wavelength` and `cavity_length` in meters,
    /// `sensitivity_floor` as displacement-equivalent phase noise in m/√Hz.
    /// The voltage scale is derived from the frequency-modulation calibration.
    pub fn new(
        finesse: f64,
        wavelength: f64,
        cavity_length: f64,
        sensitivity_floor: f64,
        calibration: VoltageCalibration,
    ) -> Result<Self, ReadoutError> {
        require(finesse > 0.0, "finesse", "positive", finesse)?;
        require(wavelength > 0.0, "wavelength", "positive", wavelength)?;
        require(
            cavity_length > 0.0,
            "cavity_length",
            "positive",
            cavity_length,
        )?;
        require(
            sensitivity_floor >= 0.0,
            "sensitivity_floor",
            ">= 0",
            sensitivity_floor,
        )?;
        require(
            calibration.frequency_shift > 0.0,
            "calibration.frequency_shift",
            "positive",
            calibration.frequency_shift,
        )?;
        require(
            calibration.response_volts > 0.0,
            "calibration.response_volts",
            "positive",
            calibration.response_volts,
        )?;
        let mut p = Self {
            finesse,
            wavelength,
            cavity_length,
            sensitivity_floor,
            volt_per_meter: 0.0,
        };
        p.volt_per_meter =
            calibration.response_volts / frequency_calibration(&p, calibration.frequency_shift);
        Ok(p)
    }

    /// The bench interferometer: finesse 37 000 at λ = 810 nm, L = 1 mm
    /// cavity, δx_min = 2.8e-19 m/√Hz, calibrated at 27 mV per 200 Hz of
    /// laser frequency modulation (≈ 1 mV per 2×10⁻¹⁷ m).
    pub fn bench() -> Self {
        Self::new(
            3.7e4,
            810e-9,
            1e-3,
            2.8e-19,
            VoltageCalibration {
                frequency_shift: 200.0,
                response_volts: 27e-3,
            },
        )
        .expect("valid preset")
    }

    /// Phase shift per meter of mirror displacement, 8F/λ (rad/m).
    pub fn phase_per_meter(&self) -> f64 {
        8.0 * self.finesse / self.wavelength
    }

    /// Laser frequency (Hz) for the cavity wavelength.
    pub fn laser_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength
    }

    pub fn finesse(&self) -> f64 {
        self.finesse
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn cavity_length(&self) -> f64 {
        self.cavity_length
    }

    /// Displacement-equivalent white phase-noise density (m/√Hz).
    pub fn sensitivity_floor(&self) -> f64 {
        self.sensitivity_floor
    }

    pub fn volt_per_meter(&self) -> f64 {
        self.volt_per_meter
    }
}

/// Homodyne phase samples (radians) at the full acquisition rate.
#[derive(Debug, Clone)]
pub struct PhaseTrace {
    /// Seconds between consecutive samples.
    pub sample_period: f64,
    pub samples: Vec<f64>,
}

impl PhaseTrace {
    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_period
    }
}

/// Convert a position trace to homodyne phase, optionally adding the white
/// measurement background at the interferometer's sensitivity floor.
///
/// `carrier` is the mechanical carrier angular frequency (rad/s) the trace
/// is meant to be demodulated at; traces with fewer than 10 samples per
/// carrier cycle are rejected, since the lock-in stage downstream cannot use
/// them.
pub fn displacement_to_phase(
    x_trace: &PositionTrace,
    optics: &OpticalParams,
    carrier: f64,
    rng: &mut impl Rng,
    with_noise: bool,
) -> Result<PhaseTrace, ReadoutError> {
    require(carrier > 0.0, "carrier", "positive", carrier)?;
    require(
        x_trace.sample_period > 0.0,
        "sample_period",
        "positive",
        x_trace.sample_period,
    )?;
    let rate = x_trace.sample_rate();
    let carrier_hz = carrier / std::f64::consts::TAU;
    if rate < 10.0 * carrier_hz {
        return Err(ReadoutError::Undersampled {
            rate_hz: rate,
            carrier_hz,
        });
    }
    let ppm = optics.phase_per_meter();
    // White displacement-equivalent noise of density δx_min sampled at rate
    // f_s carries a per-sample variance δx_min²·f_s/2.
    let noise_sigma = if with_noise {
        ppm * optics.sensitivity_floor * (rate / 2.0).sqrt()
    } else {
        0.0
    };
    let samples = x_trace
        .samples
        .iter()
        .map(|&x| {
            let noise: f64 = if with_noise {
                rng.sample::<f64, _>(StandardNormal) * noise_sigma
            } else {
                0.0
            };
            ppm * x + noise
        })
        .collect();
    Ok(PhaseTrace {
        sample_period: x_trace.sample_period,
        samples,
    })
}

/// Displacement equivalent to a laser frequency shift Δν: Δx = L·Δν/ν.
pub fn frequency_calibration(optics: &OpticalParams, delta_nu: f64) -> f64 {
    optics.cavity_length * delta_nu / optics.laser_frequency()
}

/// Analysis-output volts for a given displacement.
pub fn meters_to_volts(optics: &OpticalParams, x: f64) -> f64 {
    x * optics.volt_per_meter
}

/// Displacement for a given analysis-output voltage.
pub fn volts_to_meters(optics: &OpticalParams, v: f64) -> f64 {
    v / optics.volt_per_meter
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn phase_shift_of_a_thermal_scale_displacement() {
        let optics = OpticalParams::bench();
        // 8F/λ = 3.654e11 rad/m at the bench parameters.
        assert_relative_eq!(optics.phase_per_meter(), 3.6543210e11, max_relative = 1e-6);
        let trace = PositionTrace {
            sample_period: 1.0 / 40e6,
            samples: vec![3.63e-16],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let phase = displacement_to_phase(
            &trace,
            &optics,
            std::f64::consts::TAU * 1.859e6,
            &mut rng,
            false,
        )
        .unwrap();
        assert_relative_eq!(phase.samples[0], 1.3265e-4, max_relative = 1e-4);
    }

    #[test]
    fn noise_free_conversion_is_linear_and_noisy_one_is_not() {
        let optics = OpticalParams::bench();
        let carrier = std::f64::consts::TAU * 1.859e6;
        let trace = PositionTrace {
            sample_period: 1.0 / 40e6,
            samples: vec![1e-16; 4096],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let clean = displacement_to_phase(&trace, &optics, carrier, &mut rng, false).unwrap();
        assert!(clean.samples.windows(2).all(|w| w[0] == w[1]));

        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let noisy = displacement_to_phase(&trace, &optics, carrier, &mut rng, true).unwrap();
        let mean = noisy.samples.iter().sum::<f64>() / noisy.samples.len() as f64;
        let var = noisy
            .samples
            .iter()
            .map(|s| (s - mean).powi(2))
            .sum::<f64>()
            / noisy.samples.len() as f64;
        let expected_var =
            (optics.phase_per_meter() * optics.sensitivity_floor).powi(2) * 40e6 / 2.0;
        assert_relative_eq!(var, expected_var, max_relative = 0.1);
        assert_relative_eq!(mean, clean.samples[0], max_relative = 0.05);
    }

    #[test]
    fn undersampled_traces_are_rejected() {
        let optics = OpticalParams::bench();
        let trace = PositionTrace {
            sample_period: 1e-6, // 1 MHz, below 10x the 1.859 MHz carrier
            samples: vec![0.0; 16],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let err = displacement_to_phase(
            &trace,
            &optics,
            std::f64::consts::TAU * 1.859e6,
            &mut rng,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, ReadoutError::Undersampled { .. }));
    }

    #[test]
    fn frequency_modulation_calibration() {
        let optics = OpticalParams::bench();
        let dx = frequency_calibration(&optics, 200.0);
        // Exact formula: L·Δν·λ/c.
        assert_eq!(dx, 1e-3 * 200.0 * 810e-9 / crate::constants::SPEED_OF_LIGHT);
        assert_relative_eq!(dx, 5.4e-16, max_relative = 1e-3);
    }

    #[test]
    fn voltage_scale_follows_the_modulation_calibration() {
        let optics = OpticalParams::bench();
        // 27 mV per 5.4e-16 m puts 1 mV at 2e-17 m.
        assert_relative_eq!(volts_to_meters(&optics, 1e-3), 2e-17, max_relative = 1e-3);
        assert_relative_eq!(volts_to_meters(&optics, 0.1), 2e-15, max_relative = 1e-3);
        // The paper-scale noise level: 0.86 mV of output noise is 1.7e-17 m.
        assert_relative_eq!(
            volts_to_meters(&optics, 0.86e-3),
            1.72e-17,
            max_relative = 1e-3
        );
    }

    #[test]
    fn invalid_optics_are_rejected() {
        let cal = VoltageCalibration {
            frequency_shift: 200.0,
            response_volts: 27e-3,
        };
        assert!(OpticalParams::new(0.0, 810e-9, 1e-3, 2.8e-19, cal).is_err());
        assert!(OpticalParams::new(3.7e4, -1.0, 1e-3, 2.8e-19, cal).is_err());
        assert!(OpticalParams::new(
            3.7e4,
            810e-9,
            1e-3,
            2.8e-19,
            VoltageCalibration {
                frequency_shift: 0.0,
                response_volts: 27e-3
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn volt_meter_round_trip_is_exact(x in -1e-12..1e-12f64) {
            let optics = OpticalParams::bench();
            let back = volts_to_meters(&optics, meters_to_volts(&optics, x));
            prop_assert!((back - x).abs() <= 4.0 * f64::EPSILON * x.abs());
        }
    }
}
