//! Integrability of big jumps and the small-jump richness condition of the
//! Lévy measure driving a jump OU process.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::JumpPart;

/// Evaluation points `eps = 10^-1 .. 10^-6` of the small-jump ratio.
const EPS_DECADES: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
const GROWTH_FACTOR: f64 = 2.0;

/// Parametric description of a Lévy measure `nu`.
#[derive(Debug, Clone, PartialEq)]
pub enum LevyMeasure {
    CompoundPoisson(JumpPart),
    /// symmetric `alpha`-stable: density `c |x|^{-1-alpha}`, `0 < alpha < 2`
    Stable { alpha: f64, c: f64 },
    /// symmetric density `c |x|^{-1-origin_index}` on `|x| <= 1` and
    /// `c |x|^{-1-tail_index}` beyond
    PowerLaw { origin_index: f64, tail_index: f64, c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevyReport {
    /// `int_{|x| > 1} |x| nu(dx) < infinity`
    pub cond11: bool,
    pub big_jump_moment: f64,
    /// `g(eps) -> infinity` as `eps -> 0`, judged on the sampled decades
    pub cond12: bool,
    /// `(eps, g(eps))` with `g(eps) = int (x^2 ^ eps^2) nu(dx) / (eps^2 ln(1/eps))`
    pub g: Vec<(f64, f64)>,
    /// exact divergence verdict where the measure has a known origin exponent
    pub cond12_analytic: Option<bool>,
}

/// `int (x^2 ^ eps^2) nu(dx)` for the symmetric power law, `eps < 1`.
fn power_truncated(origin: f64, tail: f64, c: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    let near = eps.powf(2.0 - origin) / (2.0 - origin);
    let mid = if origin == 0.0 { e2 * (1.0 / eps).ln() } else { e2 * (eps.powf(-origin) - 1.0) / origin };
    let far = e2 / tail;
    2.0 * c * (near + mid + far)
}

/// Truncated second moment `eps -> int (x^2 ^ eps^2) nu(dx)`.
type Truncated = Box<dyn Fn(f64) -> f64>;

/// Checks both conditions. Stable indices outside `(0, 2)` are rejected.
pub fn check_levy_conditions(nu: &LevyMeasure) -> Result<LevyReport> {
    let (big, truncated, analytic): (f64, Truncated, Option<bool>) = match nu {
        LevyMeasure::CompoundPoisson(j) => {
            let big = j.rate * j.size.large_abs_moment();
            let size = j.size.clone();
            let rate = j.rate;
            (big, Box::new(move |eps| rate * size.truncated_second_moment(eps)), Some(false))
        }
        LevyMeasure::Stable { alpha, c } => {
            if !(*alpha > 0.0 && *alpha < 2.0) {
                return invalid(format!("stable index must lie in (0, 2), got {alpha}"));
            }
            return check_levy_conditions(&LevyMeasure::PowerLaw { origin_index: *alpha, tail_index: *alpha, c: *c });
        }
        LevyMeasure::PowerLaw { origin_index, tail_index, c } => {
            if !(*c > 0.0) || !(*tail_index > 0.0) {
                return invalid("power-law measure needs c > 0 and a positive tail index");
            }
            if !(*origin_index >= 0.0) || *origin_index >= 2.0 {
                return Err(Error::Unsupported(format!(
                    "origin index {origin_index} makes int x^2 nu(dx) diverge near 0; only indices in [0, 2) are supported"
                )));
            }
            let big = if *tail_index > 1.0 { 2.0 * c / (tail_index - 1.0) } else { f64::INFINITY };
            let (o, t, c) = (*origin_index, *tail_index, *c);
            (big, Box::new(move |eps| power_truncated(o, t, c, eps)), Some(o > 0.0))
        }
    };
    let g: Vec<(f64, f64)> = EPS_DECADES.iter().map(|&e| (e, truncated(e) / (e * e * (1.0 / e).ln()))).collect();
    let monotone = g.windows(2).all(|w| w[1].1 > w[0].1);
    let grows = g[g.len() - 1].1 >= GROWTH_FACTOR * g[0].1;
    Ok(LevyReport { cond11: big.is_finite(), big_jump_moment: big, cond12: monotone && grows, g, cond12_analytic: analytic })
}
