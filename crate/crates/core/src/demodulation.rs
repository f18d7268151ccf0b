//! Lock-in detection of the mirror motion.
//!
//! The measured phase is narrow-band around the mechanical resonance, so the
//! analysis chain mirrors the bench electronics: a resonant bandpass centred
//! on the mechanical line, multiplication by ±1 square references in phase
//! and in quadrature with the resonance, a second-order low-pass on each
//! mixer output, and decimation.  The output is calibrated in meters: a pure
//! tone x(t) = A·cos(Ω_M t) reads (X1, X2) = (A, 0).
//!
//! Quadrature convention: x(t) = X1·cos(Ω_M t) + X2·sin(Ω_M t), references
//! aligned to the first sample of the trace (t = 0).

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::readout::{OpticalParams, PhaseTrace};
use crate::trace::{QuadratureTrace, TraceOrigin};

use std::f64::consts::{FRAC_PI_2, PI, TAU};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemodError {
    #[error("{name} must be {requirement} (got {value})")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("only second-order low-pass sections are supported (got order {0})")]
    UnsupportedFilterOrder(u8),
    #[error("sample rate {rate_hz:.3e} Hz undersamples the reference {reference_hz:.3e} Hz (need >= 10 samples per cycle)")]
    Undersampled { rate_hz: f64, reference_hz: f64 },
    #[error("output sample period {period:.3e} s is shorter than 1/(4 f_c) = {minimum:.3e} s; the low-pass cannot fill it")]
    OutputPeriodTooShort { period: f64, minimum: f64 },
}

fn require(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: f64,
) -> Result<(), DemodError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(DemodError::InvalidParameter {
            name,
            requirement,
            value,
        })
    }
}

/// Analog prototype of the analysis filters.  All frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    /// Bandpass centre frequency.
    pub bandpass_center: f64,
    /// Bandpass −3 dB full width.
    pub bandpass_width: f64,
    /// Low-pass −3 dB cutoff.
    pub lowpass_cutoff: f64,
    /// Low-pass order; only 2 is supported.
    pub lowpass_order: u8,
}

impl FilterSpec {
    /// The bench chain: 10 kHz-wide bandpass on the 1.859 MHz resonance,
    /// 460 Hz second-order low-pass after the mixers.
    pub fn bench() -> Self {
        Self {
            bandpass_center: TAU * 1.859e6,
            bandpass_width: TAU * 1e4,
            lowpass_cutoff: TAU * 460.0,
            lowpass_order: 2,
        }
    }

    /// Companion chain for the scaled 10 kHz test oscillator.  The passbands
    /// are proportionally wider because the scaled mode (Q = 100) has a far
    /// broader thermal line than the bench resonator.
    pub fn scaled() -> Self {
        Self {
            bandpass_center: TAU * 1e4,
            bandpass_width: TAU * 8e3,
            lowpass_cutoff: TAU * 3e3,
            lowpass_order: 2,
        }
    }

    pub fn validate(&self) -> Result<(), DemodError> {
        require(
            self.bandpass_center > 0.0,
            "bandpass_center",
            "positive",
            self.bandpass_center,
        )?;
        require(
            self.bandpass_width > 0.0 && self.bandpass_width < 2.0 * self.bandpass_center,
            "bandpass_width",
            "positive and below twice the centre",
            self.bandpass_width,
        )?;
        require(
            self.lowpass_cutoff > 0.0,
            "lowpass_cutoff",
            "positive",
            self.lowpass_cutoff,
        )?;
        if self.lowpass_order != 2 {
            return Err(DemodError::UnsupportedFilterOrder(self.lowpass_order));
        }
        Ok(())
    }
}

/// Demodulator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemodConfig {
    /// Square-reference frequency (rad/s), normally the mechanical resonance.
    pub reference_frequency: f64,
    /// Seconds between decimated output samples.
    pub output_sample_period: f64,
    /// Overall output gain; compensates the square-wave fundamental (4/π),
    /// the mixer halving and the bandpass insertion response.  ≈ π/2 for a
    /// transparent bandpass — see [`calibrate_reference`].
    pub gain_correction: f64,
    /// Phase of the demodulation reference relative to the signal carrier
    /// (rad).  The outputs are rotated by −reference_phase, which plays the
    /// role of the lock-in's reference phase shifter: sampled ±1 references
    /// can only realise phases in whole-sample steps, so the residual is
    /// taken out here, after mixing, where it is continuous.
    pub reference_phase: f64,
    /// Relative gain error of the quadrature channel; |ε| ≤ 0.01.  Larger
    /// imbalances are calibration errors, not measurements.
    pub channel_mismatch: f64,
}

impl DemodConfig {
    pub fn new(reference_frequency: f64, output_sample_period: f64, gain_correction: f64) -> Self {
        Self {
            reference_frequency,
            output_sample_period,
            gain_correction,
            reference_phase: 0.0,
            channel_mismatch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DemodError> {
        require(
            self.reference_frequency > 0.0,
            "reference_frequency",
            "positive",
            self.reference_frequency,
        )?;
        require(
            self.output_sample_period > 0.0,
            "output_sample_period",
            "positive",
            self.output_sample_period,
        )?;
        require(
            self.gain_correction > 0.0,
            "gain_correction",
            "positive",
            self.gain_correction,
        )?;
        require(
            self.reference_phase.is_finite(),
            "reference_phase",
            "finite",
            self.reference_phase,
        )?;
        require(
            self.channel_mismatch.abs() <= 0.01,
            "channel_mismatch",
            "within ±1%",
            self.channel_mismatch,
        )?;
        Ok(())
    }
}

/// Direct-form-I biquad section.
#[derive(Debug, Clone)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    /// Resonant bandpass with exactly unity gain and zero phase at the
    /// centre frequency (`center`, rad/s) and the given −3 dB full width
    /// (rad/s), discretised at `sample_rate` (Hz).
    pub fn resonant_bandpass(center: f64, width: f64, sample_rate: f64) -> Self {
        let w0 = center / sample_rate;
        // alpha = sin(w0)·BW/(2·f0); the quality factor is f0/BW.
        let alpha = w0.sin() * width / (2.0 * center);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    /// Second-order Butterworth low-pass (−3 dB at `cutoff`, rad/s) with
    /// unity DC gain up to coefficient rounding, discretised at
    /// `sample_rate` (Hz).
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Self {
        let w0 = cutoff / sample_rate;
        let alpha = w0.sin() * std::f64::consts::FRAC_1_SQRT_2;
        // 1 − cos(w0) evaluated as 2·sin²(w0/2): keeps the DC zero-pair of
        // the numerator exact when w0 is small.
        let one_minus_cos = 2.0 * (w0 / 2.0).sin().powi(2);
        let a0 = 1.0 + alpha;
        Self {
            b0: one_minus_cos / 2.0 / a0,
            b1: one_minus_cos / a0,
            b2: one_minus_cos / 2.0 / a0,
            a1: -2.0 * (1.0 - one_minus_cos) / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2
            - self.a1 * self.y1
            - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }

    /// Frequency response at `omega` rad/s for the given sample rate.
    pub fn response(&self, omega: f64, sample_rate: f64) -> num_complex::Complex<f64> {
        let z1 = num_complex::Complex::from_polar(1.0, -omega / sample_rate);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }
}

/// ±1 square references derived from one phase accumulator.  The in-phase
/// reference follows sgn(cos θ), the quadrature one sgn(sin θ), with
/// sgn(0) = +1.
#[derive(Debug, Clone)]
struct SquareReferences {
    theta: f64,
    step: f64,
}

impl SquareReferences {
    fn new(reference_frequency: f64, sample_rate: f64) -> Self {
        Self {
            theta: 0.0,
            step: reference_frequency / sample_rate,
        }
    }

    /// References for the current sample, then advance one sample.
    #[inline]
    fn next(&mut self) -> (f64, f64) {
        let refs = square_refs(self.theta);
        self.theta += self.step;
        if self.theta >= TAU {
            self.theta -= TAU;
        }
        refs
    }
}

#[inline]
fn square_refs(theta: f64) -> (f64, f64) {
    let i = if theta <= FRAC_PI_2 || theta >= 3.0 * FRAC_PI_2 {
        1.0
    } else {
        -1.0
    };
    let q = if theta <= PI { 1.0 } else { -1.0 };
    (i, q)
}

/// Streaming demodulator: feed phase samples, collect decimated quadrature
/// pairs in meters.
#[derive(Debug, Clone)]
pub struct DemodChain {
    bandpass: Biquad,
    lowpass_i: Biquad,
    lowpass_q: Biquad,
    refs: SquareReferences,
    gain_i: f64,
    gain_q: f64,
    ref_cos: f64,
    ref_sin: f64,
    decimation: usize,
    countdown: usize,
    sample_period: f64,
}

impl DemodChain {
    pub fn new(
        optics: &OpticalParams,
        filter: &FilterSpec,
        config: &DemodConfig,
        sample_rate: f64,
    ) -> Result<Self, DemodError> {
        filter.validate()?;
        config.validate()?;
        require(sample_rate > 0.0, "sample_rate", "positive", sample_rate)?;
        let reference_hz = config.reference_frequency / TAU;
        if sample_rate < 10.0 * reference_hz {
            return Err(DemodError::Undersampled {
                rate_hz: sample_rate,
                reference_hz,
            });
        }
        require(
            filter.bandpass_center / sample_rate < PI,
            "bandpass_center",
            "below the Nyquist frequency",
            filter.bandpass_center,
        )?;
        let decimation = (config.output_sample_period * sample_rate).round().max(1.0) as usize;
        let actual_period = decimation as f64 / sample_rate;
        let minimum = PI / (2.0 * filter.lowpass_cutoff); // 1/(4 f_c)
        if actual_period < minimum * (1.0 - 1e-9) {
            return Err(DemodError::OutputPeriodTooShort {
                period: actual_period,
                minimum,
            });
        }
        let meters_per_phase = 1.0 / optics.phase_per_meter();
        let (ref_sin, ref_cos) = config.reference_phase.sin_cos();
        Ok(Self {
            bandpass: Biquad::resonant_bandpass(
                filter.bandpass_center,
                filter.bandpass_width,
                sample_rate,
            ),
            lowpass_i: Biquad::butterworth_lowpass(filter.lowpass_cutoff, sample_rate),
            lowpass_q: Biquad::butterworth_lowpass(filter.lowpass_cutoff, sample_rate),
            refs: SquareReferences::new(config.reference_frequency, sample_rate),
            gain_i: config.gain_correction * meters_per_phase,
            gain_q: config.gain_correction * meters_per_phase * (1.0 + config.channel_mismatch),
            ref_cos,
            ref_sin,
            decimation,
            countdown: decimation,
            sample_period: actual_period,
        })
    }

    /// Seconds between outputs (an integer multiple of the input period).
    pub fn output_sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Process one phase sample; returns a quadrature pair once per
    /// decimation interval.
    #[inline]
    pub fn push(&mut self, phase: f64) -> Option<(f64, f64)> {
        let filtered = self.bandpass.process(phase);
        let (ri, rq) = self.refs.next();
        let i = self.lowpass_i.process(filtered * ri);
        let q = self.lowpass_q.process(filtered * rq);
        self.countdown -= 1;
        if self.countdown == 0 {
            self.countdown = self.decimation;
            // Undo the reference phase, then scale each channel.
            let x1 = i * self.ref_cos + q * self.ref_sin;
            let x2 = q * self.ref_cos - i * self.ref_sin;
            Some((x1 * self.gain_i, x2 * self.gain_q))
        } else {
            None
        }
    }
}

/// Run a whole phase trace through the chain.  The trace's own sample rate
/// drives the filters; outputs start one decimation interval in, so the
/// caller is expected to discard the filter-settling head of the result.
pub fn demodulate(
    phase: &PhaseTrace,
    optics: &OpticalParams,
    filter: &FilterSpec,
    config: &DemodConfig,
) -> Result<QuadratureTrace, DemodError> {
    require(
        phase.sample_period > 0.0,
        "sample_period",
        "positive",
        phase.sample_period,
    )?;
    let mut chain = DemodChain::new(optics, filter, config, phase.sample_rate())?;
    let samples = phase
        .samples
        .iter()
        .filter_map(|&p| chain.push(p))
        .collect();
    Ok(QuadratureTrace {
        sample_period: chain.output_sample_period(),
        samples,
        origin: TraceOrigin::DemodulatedReadout,
        seed: 0,
    })
}

/// Bandpass a raw signal with the spec's resonant section.
pub fn bandpass(signal: &[f64], sample_period: f64, filter: &FilterSpec) -> Vec<f64> {
    let mut biquad = Biquad::resonant_bandpass(
        filter.bandpass_center,
        filter.bandpass_width,
        1.0 / sample_period,
    );
    signal.iter().map(|&s| biquad.process(s)).collect()
}

/// Low-pass a raw signal with the spec's second-order section.
pub fn lowpass2(signal: &[f64], sample_period: f64, filter: &FilterSpec) -> Vec<f64> {
    let mut biquad = Biquad::butterworth_lowpass(filter.lowpass_cutoff, 1.0 / sample_period);
    signal.iter().map(|&s| biquad.process(s)).collect()
}

/// Multiply a signal by a ±1 square reference sgn(cos(ω_ref·t + φ₀)) with
/// sgn(0) = +1 and t = 0 at the first sample.
pub fn mix_square(
    signal: &[f64],
    sample_period: f64,
    reference_frequency: f64,
    phase_offset: f64,
) -> Vec<f64> {
    let mut theta = phase_offset.rem_euclid(TAU);
    let step = reference_frequency * sample_period;
    signal
        .iter()
        .map(|&s| {
            let (i, _) = square_refs(theta);
            theta += step;
            if theta >= TAU {
                theta -= TAU;
            }
            s * i
        })
        .collect()
}

/// Measure the chain's end-to-end response to a synthetic on-resonance tone
/// and return the `(gain_correction, reference_phase)` pair that makes it
/// read `(A, 0)` for an injected `A·cos(Ω t)`.  The gain lands close to π/2
/// (the square-wave mixer's fundamental response) when the bandpass is
/// centred; the phase absorbs the half-sample granularity of the sampled
/// square references, so it stays below one input-sample of carrier phase.
pub fn calibrate_reference(
    optics: &OpticalParams,
    filter: &FilterSpec,
    reference_frequency: f64,
    sample_rate: f64,
) -> Result<(f64, f64), DemodError> {
    let fc_hz = filter.lowpass_cutoff / TAU;
    let decimation = (sample_rate / (4.0 * fc_hz)).ceil().max(1.0);
    let config = DemodConfig::new(reference_frequency, decimation / sample_rate, 1.0);
    let mut chain = DemodChain::new(optics, filter, &config, sample_rate)?;

    let amplitude = 1e-15;
    let dt = 1.0 / sample_rate;
    let settle = (10.0 / fc_hz / dt).ceil() as usize;
    // Long enough that the residual 2Ω ripple in the decimated outputs
    // averages out well below the phase being measured.
    let measure = 4 * settle;
    let ppm = optics.phase_per_meter();
    let (mut sum_i, mut sum_q, mut count) = (0.0, 0.0, 0u64);
    let (mut cos, mut sin) = (1.0f64, 0.0f64);
    let (step_cos, step_sin) = (
        (reference_frequency * dt).cos(),
        (reference_frequency * dt).sin(),
    );
    for n in 0..settle + measure {
        let phase = ppm * amplitude * cos;
        // Rotation recurrence instead of cos(Ω·n·dt): one trig call total.
        let next_cos = cos * step_cos - sin * step_sin;
        sin = cos * step_sin + sin * step_cos;
        cos = next_cos;
        if let Some((x1, x2)) = chain.push(phase) {
            if n >= settle {
                sum_i += x1;
                sum_q += x2;
                count += 1;
            }
        }
    }
    let magnitude = sum_i.hypot(sum_q) / count.max(1) as f64;
    require(
        count > 0 && magnitude > 0.0,
        "calibration",
        "a settled response",
        magnitude,
    )?;
    Ok((amplitude / magnitude, sum_q.atan2(sum_i)))
}

/// Quadrature noise level (meters, one standard deviation per channel) the
/// chain produces from the interferometer's white phase background alone.
/// Measured by pushing a synthetic noise-floor trace through the chain, so
/// it accounts for the actual filter noise bandwidth, mixer harmonics and
/// gain settings in `config`.
pub fn noise_equivalent_displacement(
    optics: &OpticalParams,
    filter: &FilterSpec,
    config: &DemodConfig,
) -> Result<f64, DemodError> {
    let sample_rate = 20.0 * config.reference_frequency / TAU;
    let mut chain = DemodChain::new(optics, filter, config, sample_rate)?;
    let fc_hz = filter.lowpass_cutoff / TAU;

    // Enough effective samples (≈ 2·B·T per channel) to pin the pooled
    // dispersion to ~0.5%.
    let settle = (20.0 / fc_hz * sample_rate) as usize;
    let measure = (5000.0 / fc_hz * sample_rate) as usize;
    let sigma = optics.phase_per_meter() * optics.sensitivity_floor() * (sample_rate / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x6e6f697365); // "noise"

    let (mut s1, mut s2, mut q1, mut q2, mut n) = (0.0, 0.0, 0.0, 0.0, 0u64);
    for k in 0..settle + measure {
        if let Some((x1, x2)) = chain.push(normal.sample(&mut rng)) {
            if k >= settle {
                s1 += x1;
                s2 += x2;
                q1 += x1 * x1;
                q2 += x2 * x2;
                n += 1;
            }
        }
    }
    require(n > 1, "noise run", "more than one output sample", n as f64)?;
    let nf = n as f64;
    let v1 = q1 / nf - (s1 / nf).powi(2);
    let v2 = q2 / nf - (s2 / nf).powi(2);
    Ok(((v1 + v2) / 2.0).sqrt())
}

/// Apply the chain's equivalent baseband response to an already-demodulated
/// or directly simulated quadrature trace: the resonant bandpass acts on the
/// slow envelope as a one-pole low-pass of half the bandpass width, and each
/// quadrature then sees the same second-order low-pass as the mixer outputs.
/// Decimates by `decimate` afterwards.
///
/// This is what makes rotating-frame runs comparable, sample for sample,
/// with full-band runs read out through [`demodulate`]: both then describe
/// the motion inside the same measurement bandwidth.
pub fn baseband_response(
    trace: &QuadratureTrace,
    filter: &FilterSpec,
    decimate: usize,
) -> Result<QuadratureTrace, DemodError> {
    require(
        trace.sample_period > 0.0,
        "sample_period",
        "positive",
        trace.sample_period,
    )?;
    let mut chain = BasebandChain::new(filter, 1.0 / trace.sample_period, decimate)?;
    let samples = trace
        .samples
        .iter()
        .filter_map(|&s| chain.push(s))
        .collect();
    Ok(QuadratureTrace {
        sample_period: trace.sample_period * decimate as f64,
        samples,
        origin: trace.origin,
        seed: trace.seed,
    })
}

/// Streaming form of [`baseband_response`], for traces too long to hold at
/// the integration rate: feed quadrature pairs as they are produced and keep
/// only the decimated output.
pub struct BasebandChain {
    pole: f64,
    env1: f64,
    env2: f64,
    lowpass_1: Biquad,
    lowpass_2: Biquad,
    decimate: usize,
    countdown: usize,
}

impl BasebandChain {
    pub fn new(filter: &FilterSpec, sample_rate: f64, decimate: usize) -> Result<Self, DemodError> {
        filter.validate()?;
        require(sample_rate > 0.0, "sample_rate", "positive", sample_rate)?;
        require(decimate >= 1, "decimate", ">= 1", decimate as f64)?;
        // The envelope one-pole must still be slow on the input grid.
        require(
            filter.bandpass_width / 2.0 / sample_rate < 1.0,
            "bandpass_width",
            "resolvable at the trace sample rate",
            filter.bandpass_width,
        )?;
        Ok(Self {
            // Exact exponential step of dy/dt = (W/2)(u − y).
            pole: (-(filter.bandpass_width / 2.0) / sample_rate).exp(),
            env1: 0.0,
            env2: 0.0,
            lowpass_1: Biquad::butterworth_lowpass(filter.lowpass_cutoff, sample_rate),
            lowpass_2: Biquad::butterworth_lowpass(filter.lowpass_cutoff, sample_rate),
            decimate,
            countdown: decimate,
        })
    }

    #[inline]
    pub fn push(&mut self, (x1, x2): (f64, f64)) -> Option<(f64, f64)> {
        self.env1 = self.pole * self.env1 + (1.0 - self.pole) * x1;
        self.env2 = self.pole * self.env2 + (1.0 - self.pole) * x2;
        let y1 = self.lowpass_1.process(self.env1);
        let y2 = self.lowpass_2.process(self.env2);
        self.countdown -= 1;
        if self.countdown == 0 {
            self.countdown = self.decimate;
            Some((y1, y2))
        } else {
            None
        }
    }
}
