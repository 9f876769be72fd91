//! Maximum-likelihood Weibull fit of recovery durations.
//!
//! The shape `k` solves the profile-likelihood equation
//!
//! ```text
//! h(k) = Σ x^k ln x / Σ x^k − 1/k − (1/n) Σ ln x = 0
//! ```
//!
//! which is strictly increasing in `k` whenever the samples are not all
//! equal. Newton steps are taken from `k = 1` and replaced by bisection
//! whenever they leave the current bracket. The scale then follows in closed
//! form as `λ = ((1/n) Σ x^k)^(1/k)`.

use super::{ModelError, WeibullParams};

const SHAPE_BRACKET: (f64, f64) = (1e-3, 1e3);
const RESIDUAL_TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub params: WeibullParams,
    pub iterations: usize,
    pub log_likelihood: f64,
}

struct Profile {
    /// ln(x_i / max x)
    ln_scaled: Vec<f64>,
    ln_x: Vec<f64>,
    mean_ln: f64,
    ln_max: f64,
}

impl Profile {
    /// Residual h(k) and its derivative.
    fn residual(&self, k: f64) -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&ly, &lx) in self.ln_scaled.iter().zip(&self.ln_x) {
            let w = (k * ly).exp();
            s0 += w;
            s1 += w * lx;
            s2 += w * lx * lx;
        }
        let a = s1 / s0;
        let h = a - 1.0 / k - self.mean_ln;
        let dh = (s2 / s0 - a * a).max(0.0) + 1.0 / (k * k);
        (h, dh)
    }

    /// (1/n) Σ x^k, returned as its logarithm.
    fn ln_mean_power(&self, k: f64) -> f64 {
        let n = self.ln_scaled.len() as f64;
        let s0: f64 = self.ln_scaled.iter().map(|&ly| (k * ly).exp()).sum();
        k * self.ln_max + (s0 / n).ln()
    }
}

pub fn fit_weibull(samples: &[f64]) -> Result<WeibullFit, ModelError> {
    if samples.len() < 3 {
        return Err(ModelError::TooFewSamples(samples.len()));
    }
    if let Some(&bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(ModelError::InvalidSample(bad));
    }
    if samples.iter().all(|&x| x == samples[0]) {
        return Err(ModelError::DegenerateSamples);
    }

    let n = samples.len() as f64;
    let ln_x: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let ln_max = ln_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let profile = Profile {
        ln_scaled: ln_x.iter().map(|l| l - ln_max).collect(),
        mean_ln: ln_x.iter().sum::<f64>() / n,
        ln_x,
        ln_max,
    };

    let (mut lo, mut hi) = SHAPE_BRACKET;
    if profile.residual(lo).0 > 0.0 || profile.residual(hi).0 < 0.0 {
        return Err(ModelError::NonConvergence);
    }

    let mut k = 1.0;
    let mut converged = None;
    for iter in 1..=MAX_ITER {
        let (h, dh) = profile.residual(k);
        if h.abs() < RESIDUAL_TOL {
            converged = Some(iter);
            break;
        }
        if h < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let newton = k - h / dh;
        k = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let iterations = converged.ok_or(ModelError::NonConvergence)?;

    let lambda = (profile.ln_mean_power(k) / k).exp();
    let params = WeibullParams::new(k, lambda)?;
    Ok(WeibullFit {
        params,
        iterations,
        log_likelihood: log_likelihood(samples, &params),
    })
}

fn log_likelihood(samples: &[f64], w: &WeibullParams) -> f64 {
    let (k, l) = (w.k, w.lambda);
    samples
        .iter()
        .map(|&x| (k / l).ln() + (k - 1.0) * (x / l).ln() - (x / l).powf(k))
        .sum()
}
