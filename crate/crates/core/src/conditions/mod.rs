//! Mechanical checks of sufficient conditions for positive Harris recurrence
//! of the grid chain.
//!
//! Every supremum or infimum over a non-compact set is approximated by a grid
//! scan, so a passing verdict means "holds on the sampled grid" and comes with
//! the witnesses and margins needed to judge it.

mod classical;
mod levy;
mod scan;
mod signal;
mod theorem11;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::exec::Execution;

pub use classical::{check_aronson, check_degenerate_2d, check_veretennikov, AronsonReport, Degenerate2dReport, VeretennikovReport};
pub use levy::{check_levy_conditions, LevyMeasure, LevyReport};
pub use signal::{check_signal_condition, compute_g_s, SignalConditionReport};
pub use theorem11::{
    check_nondegeneracy, check_theorem11, compute_c2, compute_minimal_r, find_tilde_k, lyapunov_generator, MinimalR, Nondegeneracy,
    Theorem11Report, TildeK,
};

/// Grid resolutions and tolerances shared by the scans.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    /// smallest candidate radius for the compact outside which a drift inequality holds
    pub r_min: f64,
    /// largest candidate radius; the scan itself extends to `10 * r_max`
    pub r_max: f64,
    pub radial_n: usize,
    /// directions on the circle in d = 2, extra random directions for d >= 3
    pub angular_n: usize,
    pub time_n: usize,
    /// `None` searches the largest passing value in `[1e-6, 1e3]`
    pub epsilon: Option<f64>,
    /// strict positivity margin for the smallest eigenvalue of `a`
    pub lambda_margin: f64,
    /// local time refinements around each maximiser
    pub refine_passes: usize,
    /// overrides the model's declared derivative bound
    pub c0: Option<f64>,
    /// half width of the box used for derivative estimates and bounded-coefficient checks
    pub box_half_width: f64,
    pub box_n: usize,
    /// largest value accepted as "bounded"
    pub bound_cap: f64,
    pub execution: Execution,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            r_min: 1e-2,
            r_max: 100.0,
            radial_n: 400,
            angular_n: 64,
            time_n: 64,
            epsilon: None,
            lambda_margin: 1e-6,
            refine_passes: 1,
            c0: None,
            box_half_width: 10.0,
            box_n: 41,
            bound_cap: 1e6,
            execution: Execution::default(),
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_max > self.r_min && self.r_max.is_finite()) {
            return invalid(format!("need 0 < r_min < r_max, got [{}, {}]", self.r_min, self.r_max));
        }
        if self.radial_n < 8 || self.angular_n < 8 || self.time_n < 8 || self.box_n < 8 {
            return invalid("grid resolutions must be >= 8");
        }
        if !(self.lambda_margin > 0.0) {
            return invalid(format!("lambda margin must be positive, got {}", self.lambda_margin));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return invalid(format!("epsilon must be positive, got {eps}"));
            }
        }
        if let Some(c0) = self.c0 {
            if !(c0 >= 0.0 && c0.is_finite()) {
                return invalid(format!("c0 must be >= 0, got {c0}"));
            }
        }
        if !(self.box_half_width > 0.0 && self.bound_cap > 0.0) {
            return invalid("box half width and bound cap must be positive");
        }
        Ok(())
    }
}

/// Grid point where a scanned quantity attains its extreme value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub s: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

/// A single sampled verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub value: f64,
    pub witness: Option<Witness>,
}
