//! Log mass functions for the negative binomial (real-valued shape),
//! geometric and Poisson families.
//!
//! The negative binomial here counts failures before the `r`-th success with
//! success probability `theta`:
//! `P(x) = Gamma(x + r) / (Gamma(r) x!) * theta^r * (1 - theta)^x`.

use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Counts up to this size use an exact finite sum for the rising-factorial
/// terms; log-Gamma differences lose absolute precision when `r` is large.
const DIRECT_SUM_LIMIT: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbParams {
    r: f64,
    theta: f64,
}

impl NbParams {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Domain(format!("shape r must be positive, got {r}")));
        }
        check_probability("theta", theta)?;
        Ok(NbParams { r, theta })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1), got {value}")))
    }
}

/// `ln Gamma(r + x) - ln Gamma(r)`.
pub fn log_rising(r: f64, x: u64) -> f64 {
    if x == 0 {
        0.0
    } else if x <= DIRECT_SUM_LIMIT {
        (0..x).map(|k| (r + k as f64).ln()).sum()
    } else {
        ln_gamma(r + x as f64) - ln_gamma(r)
    }
}

/// `digamma(r + x) - digamma(r)`, the derivative of [`log_rising`] in `r`.
pub fn rising_digamma(r: f64, x: u64) -> f64 {
    if x == 0 {
        0.0
    } else if x <= 2 * DIRECT_SUM_LIMIT {
        (0..x).map(|k| 1.0 / (r + k as f64)).sum()
    } else {
        digamma(r + x as f64) - digamma(r)
    }
}

/// Log of the generalized binomial coefficient `C(x + r - 1, x)`.
#[inline]
pub fn log_binom_coef(r: f64, x: u64) -> f64 {
    log_rising(r, x) - ln_factorial(x)
}

/// NB log mass from precomputed logs of `theta` and `1 - theta`.
#[inline]
pub(crate) fn nb_log_pmf_raw(x: u64, r: f64, ln_theta: f64, ln_1m_theta: f64) -> f64 {
    let tail = if x == 0 { 0.0 } else { x as f64 * ln_1m_theta };
    log_binom_coef(r, x) + r * ln_theta + tail
}

pub fn nb_log_pmf(x: u64, params: NbParams) -> f64 {
    nb_log_pmf_raw(x, params.r, params.theta.ln(), (-params.theta).ln_1p())
}

/// `(mean, variance)` of the negative binomial.
pub fn nb_moments(params: NbParams) -> (f64, f64) {
    let NbParams { r, theta } = params;
    let mean = r * (1.0 - theta) / theta;
    (mean, mean / theta)
}

pub fn geometric_log_pmf(x: u64, p: f64) -> Result<f64> {
    check_probability("p", p)?;
    Ok(p.ln() + x as f64 * (-p).ln_1p())
}

pub fn poisson_log_pmf(x: u64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("Poisson mean must be positive, got {lambda}")));
    }
    Ok(x as f64 * lambda.ln() - lambda - ln_factorial(x))
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}
