//! Closed-form laws of the Gaussian Ornstein–Uhlenbeck model
//! `dX = (S(t) - gamma X) dt + sigma dW`.

use serde::Serialize;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::signal::{Signal, SignalShape};
use crate::time::wrap_unchecked;

const QUAD_TOL: f64 = 1e-10;

/// One-dimensional normal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianLaw {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianLaw {
    pub fn new(mean: f64, variance: f64) -> Result<GaussianLaw> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return invalid(format!("Gaussian law needs finite mean and positive variance, got N({mean}, {variance})"));
        }
        Ok(GaussianLaw { mean, variance })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mean) / self.sd())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd();
        (-0.5 * z * z).exp() / (self.sd() * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mean + self.sd() * std_normal_quantile(p)
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 { f64::NEG_INFINITY } else if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    let mut z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // the inverse is only good to ~1e-12; two Newton steps against the accurate cdf
    for _ in 0..2 {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf > 0.0 {
            z -= (std_normal_cdf(z) - p) / pdf;
        }
    }
    z
}

/// `int_s^t exp(-gamma (t - v)) S(v) dv`, evaluated in wrapped time so that
/// shifting `(s, t)` by a period gives the same value.
pub fn signal_convolution(signal: &Signal, gamma: f64, s: f64, t: f64) -> Result<f64> {
    if t < s {
        return invalid(format!("need s <= t, got s={s}, t={t}"));
    }
    let span = t - s;
    if span == 0.0 {
        return Ok(0.0);
    }
    if let SignalShape::Constant(c) = signal.shape() {
        return Ok(c * (-(-gamma * span).exp_m1()) / gamma);
    }
    let start = wrap_unchecked(s, signal.period());
    let breaks: Vec<f64> = signal.breakpoints(start, start + span).into_iter().map(|b| b - start).collect();
    let r = integrate(
        |u| (-gamma * (span - u)).exp() * signal.value(start + u),
        0.0,
        span,
        &breaks,
        QuadOptions::abs(QUAD_TOL),
    )?;
    Ok(r.value)
}

/// The periodic mean `M(s) = int_0^T exp(-gamma v) / (1 - exp(-gamma T)) S(s - v) dv`.
pub fn compute_m(signal: &Signal, gamma: f64, s: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    let period = signal.period();
    let norm = -(-gamma * period).exp_m1();
    if let SignalShape::Constant(c) = signal.shape() {
        return Ok(c / gamma);
    }
    let s = wrap_unchecked(s, period);
    let breaks: Vec<f64> = signal.breakpoints(s - period, s).into_iter().map(|b| s - b).collect();
    let r = integrate(|v| (-gamma * v).exp() / norm * signal.value(s - v), 0.0, period, &breaks, QuadOptions::abs(QUAD_TOL))?;
    Ok(r.value)
}

/// Exact law of `X_t` given `X_s = x`.
pub fn ou_transition(gamma: f64, sigma: f64, signal: &Signal, s: f64, t: f64, x: f64) -> Result<GaussianLaw> {
    if !(gamma > 0.0) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    if !(t > s) {
        return invalid(format!("need t > s, got s={s}, t={t}"));
    }
    let span = t - s;
    let mean = x * (-gamma * span).exp() + signal_convolution(signal, gamma, s, t)?;
    let variance = -(-2.0 * gamma * span).exp_m1() * sigma * sigma / (2.0 * gamma);
    GaussianLaw::new(mean, variance)
}

/// Pushes the law of `X_s` forward to time `t`.
pub fn ou_push(law: GaussianLaw, gamma: f64, sigma: f64, signal: &Signal, s: f64, t: f64) -> Result<GaussianLaw> {
    let kernel = ou_transition(gamma, sigma, signal, s, t, 0.0)?;
    let decay = (-gamma * (t - s)).exp();
    GaussianLaw::new(law.mean * decay + kernel.mean, law.variance * decay * decay + kernel.variance)
}

/// `N(M(s), sigma^2 / (2 gamma))`: the invariant law of the grid chain at `s = 0`,
/// and its image at phase `s` otherwise.
pub fn ou_invariant(gamma: f64, sigma: f64, signal: &Signal, s: f64) -> Result<GaussianLaw> {
    GaussianLaw::new(compute_m(signal, gamma, s)?, sigma * sigma / (2.0 * gamma))
}
