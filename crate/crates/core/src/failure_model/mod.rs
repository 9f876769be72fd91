//! Three-state device model (Active, Transient, Permanent).
//!
//! A failed device that has been down for `t` consecutive ticks is permanent
//! with probability
//!
//! ```text
//! G(t) = γ / (γ + α · S(t))
//! ```
//!
//! where `S(t)` is the survival function of the recovery time: `e^{-(t/λ)^k}`
//! for Weibull recovery, `e^{-βt}` for exponential recovery.

mod stats;
mod weibull;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::topology::DeviceId;

pub use stats::{rates_from_stats, DurationSum, FailureStats, Interval};
pub use weibull::{fit_weibull, WeibullFit};

/// Default classification threshold on `G(t)`.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("interval duration must be positive")]
    NonPositiveDuration,
    #[error("duration sum overflow")]
    Overflow,
    #[error("insufficient data: no {0} observations")]
    InsufficientData(&'static str),
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("Weibull fit needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid sample {0}: durations must be positive and finite")]
    InvalidSample(f64),
    #[error("all samples are equal; the shape estimate diverges")]
    DegenerateSamples,
    #[error("Weibull shape estimate did not converge")]
    NonConvergence,
    #[error("invalid recovery window: need 0 <= t <= t', got t = {t}, t' = {t_prime}")]
    InvalidWindow { t: f64, t_prime: f64 },
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::InvalidParameter { name, value })
    }
}

fn elapsed(name: &'static str, t: f64) -> Result<f64, ModelError> {
    if t >= 0.0 && !t.is_nan() {
        Ok(t)
    } else {
        Err(ModelError::InvalidParameter { name, value: t })
    }
}

/// Per-tick transition rates: A→T (`alpha`), T→A (`beta`), A→P (`gamma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl MarkovRates {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ModelError> {
        Ok(MarkovRates {
            alpha: positive("alpha", alpha)?,
            beta: positive("beta", beta)?,
            gamma: positive("gamma", gamma)?,
        })
    }

    fn validate(&self) -> Result<(), ModelError> {
        MarkovRates::new(self.alpha, self.beta, self.gamma).map(|_| ())
    }

    /// Prior probability that a failure is permanent, `γ / (γ + α)`.
    pub fn permanent_prior(&self) -> f64 {
        self.gamma / (self.gamma + self.alpha)
    }
}

/// Weibull shape `k` and scale `lambda` (ticks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub k: f64,
    pub lambda: f64,
}

impl WeibullParams {
    pub fn new(k: f64, lambda: f64) -> Result<Self, ModelError> {
        Ok(WeibullParams {
            k: positive("k", k)?,
            lambda: positive("lambda", lambda)?,
        })
    }

    fn validate(&self) -> Result<(), ModelError> {
        WeibullParams::new(self.k, self.lambda).map(|_| ())
    }

    /// `P(TTR ≥ t)` for a transient failure.
    pub fn survival(&self, t: f64) -> f64 {
        (-(t / self.lambda).powf(self.k)).exp()
    }

    pub fn mean(&self) -> f64 {
        self.lambda * gamma(1.0 + 1.0 / self.k)
    }
}

fn g_from_survival(rates: &MarkovRates, survival: f64) -> f64 {
    rates.gamma / (rates.gamma + rates.alpha * survival)
}

/// `G(t) = γ / (γ + α·e^{-(t/λ)^k})`. β does not enter the Weibull form.
pub fn g_transient_weibull(
    rates: &MarkovRates,
    w: &WeibullParams,
    t: f64,
) -> Result<f64, ModelError> {
    rates.validate()?;
    w.validate()?;
    let t = elapsed("t", t)?;
    Ok(g_from_survival(rates, w.survival(t)))
}

/// `G(t) = γ / (γ + α·e^{-βt})`.
pub fn g_transient_exponential(rates: &MarkovRates, t: f64) -> Result<f64, ModelError> {
    rates.validate()?;
    let t = elapsed("t", t)?;
    Ok(g_from_survival(rates, (-rates.beta * t).exp()))
}

/// Hazard-style recovery density at `t'` given the device is still failed at `t`:
///
/// ```text
/// R(t, t') = (k/λ)(t'/λ)^{k-1} e^{-(t'/λ)^k} / e^{-(t/λ)^k}
/// ```
///
/// This is a density, not a probability mass, and may exceed 1 for large `k`.
/// With `k = 1` it depends only on `t' - t`.
pub fn recovery_probability(w: &WeibullParams, t: f64, t_prime: f64) -> Result<f64, ModelError> {
    w.validate()?;
    if !(t >= 0.0 && t_prime >= t) {
        return Err(ModelError::InvalidWindow { t, t_prime });
    }
    let (k, l) = (w.k, w.lambda);
    let exponent = (t / l).powf(k) - (t_prime / l).powf(k);
    Ok((k / l) * (t_prime / l).powf(k - 1.0) * exponent.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Permanent,
    Transient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureClassification {
    pub device: DeviceId,
    pub elapsed: f64,
    pub g: f64,
    pub verdict: Verdict,
}

/// Permanent iff `G(t) > threshold`; Weibull form when `w` is given,
/// exponential form otherwise.
pub fn classify_failure(
    device: DeviceId,
    t: f64,
    rates: &MarkovRates,
    w: Option<&WeibullParams>,
    threshold: f64,
) -> Result<FailureClassification, ModelError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelError::InvalidThreshold(threshold));
    }
    let g = match w {
        Some(w) => g_transient_weibull(rates, w, t)?,
        None => g_transient_exponential(rates, t)?,
    };
    let verdict = if g > threshold {
        Verdict::Permanent
    } else {
        Verdict::Transient
    };
    Ok(FailureClassification {
        device,
        elapsed: t,
        g,
        verdict,
    })
}
