//! From detection records to measured quantities.

mod correlation;
mod fit;
mod lm;
mod pulse;

use thiserror::Error;

pub use correlation::{
    bell_threshold, cauchy_schwarz, correlation_estimate, g2_auto, g2_auto_heralded, g2_cross, trial_mask,
    validate_windows, CSTestResult, WindowCounts, WindowSpec, BELL_THRESHOLD,
};
pub use fit::{fit_decay, lifetime_1e, DecaySample, FitReport, LifetimeConvention};
pub use pulse::{bandwidth_deconvolve, pulse_duration_fit, Histogram, PulseFit, FWHM_PER_SIGMA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("estimate undefined: {0}")]
    Undefined(String),
    #[error("invalid window `{label}`: {reason}")]
    InvalidWindow { label: String, reason: &'static str },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("point {index} has a non-positive or non-finite error bar")]
    BadErrorBar { index: usize },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("curve never reaches the 1/e target on [0, {horizon_ns}] ns")]
    NoCrossing { horizon_ns: f64 },
    #[error("unphysical input: {0}")]
    Unphysical(&'static str),
}
