//! Desk-scale simulation of an interferometrically measured mirror mode.
//!
//! A single high-Q mechanical resonance of a mirror undergoes Brownian
//! motion in a room-temperature bath.  This crate models the full
//! measurement and control chain around that mode:
//!
//! - [`model`] — closed-form predictions: susceptibilities, thermal noise
//!   levels, effective dampings/temperatures and variances under feedback;
//! - [`simulator`] — stochastic integration of the mode, either full-band
//!   (position/velocity at the mechanical period) or directly for the slow
//!   quadratures in the frame rotating at the resonance;
//! - [`readout`] — displacement to homodyne-phase conversion, frequency and
//!   voltage calibrations of the interferometer;
//! - [`demodulation`] — the lock-in chain: resonant bandpass, square-wave
//!   mixing, low-pass filtering and decimation into quadrature traces;
//! - [`analysis`] — phase-space histograms, dispersions, autocorrelation
//!   fits, quadrature rotation, gain cross-checks and jump detection.
//!
//! All spectral densities follow one convention, documented at
//! [`model::SpectralConvention`].

pub mod analysis;
pub mod constants;
pub mod demodulation;
pub mod model;
pub mod readout;
pub mod simulator;
pub mod trace;

pub use trace::{PositionTrace, QuadratureTrace, TraceOrigin};
