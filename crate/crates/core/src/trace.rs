//! Time-series containers shared by the simulator, readout and analysis stages.

/// How a quadrature trace was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOrigin {
    /// Integrated directly in the rotating frame.
    DirectRotatingFrame,
    /// Full-band position run through the homodyne readout and lock-in chain.
    DemodulatedReadout,
}

/// Uniformly sampled slow quadrature pair (X1, X2) of the mirror motion,
/// in meters: x(t) = X1(t) cos(Ω_M t) + X2(t) sin(Ω_M t).
#[derive(Debug, Clone)]
pub struct QuadratureTrace {
    /// Seconds between consecutive samples.
    pub sample_period: f64,
    /// (X1, X2) pairs, meters.
    pub samples: Vec<(f64, f64)>,
    pub origin: TraceOrigin,
    /// Seed of the run that produced this trace.
    pub seed: u64,
}

impl QuadratureTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time span covered by the trace (seconds).
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }
}

/// Uniformly sampled full-band mirror position x(t), meters.
#[derive(Debug, Clone)]
pub struct PositionTrace {
    /// Seconds between consecutive samples.
    pub sample_period: f64,
    pub samples: Vec<f64>,
}

impl PositionTrace {
    /// Sample rate in Hz.
    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_period
    }
}
