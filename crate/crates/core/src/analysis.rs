//! Phase-space and time-series analysis of quadrature traces.
//!
//! Everything here consumes a [`QuadratureTrace`] regardless of how it was
//! produced, so rotating-frame runs and demodulated full-band runs go
//! through identical statistics.

use thiserror::Error;

use crate::trace::QuadratureTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("the trace has no samples")]
    EmptyTrace,
    #[error("{name} must be {requirement} (got {value})")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("decay fit failed: {reason}")]
    FitFailed { reason: &'static str },
    #[error("need at least two gain estimates (got {0})")]
    TooFewEstimates(usize),
}

fn require(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: f64,
) -> Result<(), AnalysisError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidParameter {
            name,
            requirement,
            value,
        })
    }
}

pub const HISTOGRAM_BINS: usize = 256;

/// Occupation counts over the (X1, X2) plane, 256×256 cells spanning
/// ±`full_scale` on both axes.
#[derive(Debug, Clone)]
pub struct PhaseSpaceHistogram {
    /// Row-major counts; rows index X2 (ascending), columns X1.
    pub cells: Vec<u32>,
    /// Half-range of both axes (m).
    pub full_scale: f64,
    /// All samples offered, overflows included.
    pub total_count: u64,
    /// Samples with |X1| or |X2| at or beyond `full_scale`.
    pub overflow_count: u64,
}

impl PhaseSpaceHistogram {
    pub fn bin_width(&self) -> f64 {
        2.0 * self.full_scale / HISTOGRAM_BINS as f64
    }

    pub fn count(&self, ix1: usize, ix2: usize) -> u32 {
        self.cells[ix2 * HISTOGRAM_BINS + ix1]
    }
}

/// Accumulate a trace into a phase-space histogram.
pub fn histogram(
    trace: &QuadratureTrace,
    full_scale: f64,
) -> Result<PhaseSpaceHistogram, AnalysisError> {
    require(full_scale > 0.0, "full_scale", "positive", full_scale)?;
    if trace.samples.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut cells = vec![0u32; HISTOGRAM_BINS * HISTOGRAM_BINS];
    let mut overflow = 0u64;
    let scale = HISTOGRAM_BINS as f64 / (2.0 * full_scale);
    for &(x1, x2) in &trace.samples {
        if x1.abs() >= full_scale || x2.abs() >= full_scale || !x1.is_finite() || !x2.is_finite() {
            overflow += 1;
            continue;
        }
        let ix1 = (((x1 + full_scale) * scale) as usize).min(HISTOGRAM_BINS - 1);
        let ix2 = (((x2 + full_scale) * scale) as usize).min(HISTOGRAM_BINS - 1);
        cells[ix2 * HISTOGRAM_BINS + ix1] += 1;
    }
    Ok(PhaseSpaceHistogram {
        cells,
        full_scale,
        total_count: trace.samples.len() as u64,
        overflow_count: overflow,
    })
}

/// Per-quadrature means.
pub fn means(trace: &QuadratureTrace) -> Result<(f64, f64), AnalysisError> {
    if trace.samples.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let n = trace.samples.len() as f64;
    let (s1, s2) = trace
        .samples
        .iter()
        .fold((0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1));
    Ok((s1 / n, s2 / n))
}

/// Per-quadrature standard deviations (population, mean-subtracted).
/// A constant trace has dispersion zero; only an empty trace is an error.
pub fn dispersions(trace: &QuadratureTrace) -> Result<(f64, f64), AnalysisError> {
    let (m1, m2) = means(trace)?;
    let n = trace.samples.len() as f64;
    let (q1, q2) = trace.samples.iter().fold((0.0, 0.0), |a, s| {
        (a.0 + (s.0 - m1).powi(2), a.1 + (s.1 - m2).powi(2))
    });
    Ok(((q1 / n).sqrt(), (q2 / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureIndex {
    X1,
    X2,
}

/// Sampled correlation function with an optional exponential-decay fit.
#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub lag_times: Vec<f64>,
    /// C_ij(τ) in m² (biased estimator, mean subtracted).
    pub values: Vec<f64>,
    /// Effective damping rate (1/s) from the autocorrelation decay; `None`
    /// for cross-correlations.
    pub fitted_gamma: Option<f64>,
    /// Fitted zero-lag variance (m²); `None` for cross-correlations.
    pub fitted_variance: Option<f64>,
    /// RMS of the log-domain fit residuals; `None` for cross-correlations.
    pub fit_residual: Option<f64>,
}

/// Correlation C_ij(τ) of two quadrature channels up to `max_lag` seconds.
///
/// For an autocorrelation (i = j) the estimate is additionally fitted to
/// V·e^(−γ·τ/2) over the lags where C stays above 0.1·C(0), which pins the
/// effective damping rate of the motion.
pub fn correlation(
    trace: &QuadratureTrace,
    i: QuadratureIndex,
    j: QuadratureIndex,
    max_lag: f64,
) -> Result<CorrelationEstimate, AnalysisError> {
    if trace.samples.len() < 2 {
        return Err(AnalysisError::EmptyTrace);
    }
    require(max_lag >= 0.0, "max_lag", ">= 0", max_lag)?;
    let pick = |s: &(f64, f64), which: QuadratureIndex| match which {
        QuadratureIndex::X1 => s.0,
        QuadratureIndex::X2 => s.1,
    };
    let n = trace.samples.len();
    let a: Vec<f64> = trace.samples.iter().map(|s| pick(s, i)).collect();
    let b: Vec<f64> = trace.samples.iter().map(|s| pick(s, j)).collect();
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let max_k = ((max_lag / trace.sample_period).round() as usize).min(n - 1);

    let mut lag_times = Vec::with_capacity(max_k + 1);
    let mut values = Vec::with_capacity(max_k + 1);
    for k in 0..=max_k {
        let mut sum = 0.0;
        for idx in 0..n - k {
            sum += (a[idx] - mean_a) * (b[idx + k] - mean_b);
        }
        lag_times.push(k as f64 * trace.sample_period);
        values.push(sum / n as f64);
    }

    let (fitted_gamma, fitted_variance, fit_residual) = if i == j {
        let c0 = values[0];
        if c0 <= 0.0 {
            return Err(AnalysisError::FitFailed {
                reason: "non-positive zero-lag autocorrelation",
            });
        }
        // Contiguous window above a tenth of the zero-lag value; beyond it
        // the estimator is mostly noise.
        let window = values.iter().take_while(|&&v| v > 0.1 * c0).count();
        let (gamma, variance, residual) =
            fit_exponential_decay(&lag_times[..window], &values[..window])?;
        (Some(gamma), Some(variance), Some(residual))
    } else {
        (None, None, None)
    };
    Ok(CorrelationEstimate {
        lag_times,
        values,
        fitted_gamma,
        fitted_variance,
        fit_residual,
    })
}

/// Least-squares fit of V·e^(−γ·τ/2) to positive correlation samples,
/// performed on ln C.  Returns (γ, V, RMS log residual).
pub fn fit_exponential_decay(
    lags: &[f64],
    values: &[f64],
) -> Result<(f64, f64, f64), AnalysisError> {
    if lags.len() != values.len() || lags.len() < 2 {
        return Err(AnalysisError::FitFailed {
            reason: "need at least two points inside the fit window",
        });
    }
    if values.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(AnalysisError::FitFailed {
            reason: "correlation values must be positive and finite",
        });
    }
    let n = lags.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean_t = lags.iter().sum::<f64>() / n;
    let mean_l = logs.iter().sum::<f64>() / n;
    let (mut stt, mut stl) = (0.0, 0.0);
    for (t, l) in lags.iter().zip(&logs) {
        stt += (t - mean_t).powi(2);
        stl += (t - mean_t) * (l - mean_l);
    }
    if stt == 0.0 {
        return Err(AnalysisError::FitFailed {
            reason: "degenerate lag axis",
        });
    }
    let slope = stl / stt;
    let intercept = mean_l - slope * mean_t;
    let residual = (lags
        .iter()
        .zip(&logs)
        .map(|(t, l)| (l - (intercept + slope * t)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((-2.0 * slope, intercept.exp(), residual))
}

/// Rotate the quadrature plane by `angle`:
/// X1' = X1·cos θ + X2·sin θ, X2' = −X1·sin θ + X2·cos θ.
pub fn rotate_quadratures(trace: &QuadratureTrace, angle: f64) -> QuadratureTrace {
    let (s, c) = angle.sin_cos();
    QuadratureTrace {
        sample_period: trace.sample_period,
        samples: trace
            .samples
            .iter()
            .map(|&(x1, x2)| (x1 * c + x2 * s, -x1 * s + x2 * c))
            .collect(),
        origin: trace.origin,
        seed: trace.seed,
    }
}

/// Agreement summary over repeated feedback-gain measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    pub mean: f64,
    /// Max − min of the individual estimates.
    pub spread: f64,
    /// False when the spread exceeds 20% of the mean magnitude (floored at
    /// a gain of 0.1 so near-zero means don't divide away the check).
    pub consistent: bool,
}

/// Combine independent estimates of the same feedback gain.
pub fn estimate_gain(estimates: &[f64]) -> Result<GainEstimate, AnalysisError> {
    if estimates.len() < 2 {
        return Err(AnalysisError::TooFewEstimates(estimates.len()));
    }
    if estimates.iter().any(|e| !e.is_finite()) {
        return Err(AnalysisError::InvalidParameter {
            name: "estimates",
            requirement: "finite",
            value: f64::NAN,
        });
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let max = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    Ok(GainEstimate {
        mean,
        spread,
        consistent: spread <= 0.2 * mean.abs().max(0.1),
    })
}

/// Residence statistics of the bistable (saturated above-threshold) regime.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpStats {
    /// Full lobe-to-lobe transitions.
    pub jump_count: usize,
    /// Segment durations (s): first lobe entry to first jump, between
    /// consecutive jumps, and last jump to the end of the trace.
    pub dwell_times: Vec<f64>,
    /// Mean X2 over the samples assigned to the (+, −) lobes; 0.0 for a
    /// lobe that is never visited.
    pub lobe_means: (f64, f64),
}

/// Detect phase jumps of the X2 quadrature between the ±lobes.
///
/// Hysteretic: a lobe is entered only when |X2| ≥ `threshold`, and samples
/// inside the dead band keep their previous assignment, so noise wiggles
/// around zero are not counted as jumps.
pub fn detect_jumps(trace: &QuadratureTrace, threshold: f64) -> Result<JumpStats, AnalysisError> {
    require(threshold > 0.0, "threshold", "positive", threshold)?;
    if trace.samples.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let dt = trace.sample_period;
    let mut lobe: Option<i8> = None;
    let mut jumps = 0usize;
    let mut dwell_times = Vec::new();
    let mut segment_start: Option<usize> = None;
    let (mut sum_plus, mut n_plus, mut sum_minus, mut n_minus) = (0.0, 0u64, 0.0, 0u64);
    for (k, &(_, x2)) in trace.samples.iter().enumerate() {
        let current = if x2 >= threshold {
            Some(1)
        } else if x2 <= -threshold {
            Some(-1)
        } else {
            lobe // dead band: keep the previous assignment
        };
        if let (Some(prev), Some(next)) = (lobe, current) {
            if prev != next {
                jumps += 1;
                if let Some(start) = segment_start {
                    dwell_times.push((k - start) as f64 * dt);
                }
                segment_start = Some(k);
            }
        } else if lobe.is_none() && current.is_some() {
            segment_start = Some(k);
        }
        lobe = current;
        match lobe {
            Some(1) => {
                sum_plus += x2;
                n_plus += 1;
            }
            Some(-1) => {
                sum_minus += x2;
                n_minus += 1;
            }
            _ => {}
        }
    }
    if let Some(start) = segment_start {
        dwell_times.push((trace.samples.len() - start) as f64 * dt);
    }
    let mean_plus = if n_plus > 0 {
        sum_plus / n_plus as f64
    } else {
        0.0
    };
    let mean_minus = if n_minus > 0 {
        sum_minus / n_minus as f64
    } else {
        0.0
    };
    Ok(JumpStats {
        jump_count: jumps,
        dwell_times,
        lobe_means: (mean_plus, mean_minus),
    })
}
