//! Aronson's bounded uniformly elliptic setting, Veretennikov's time-homogeneous
//! condition and the hypoelliptic two-dimensional condition.

use serde::Serialize;

use super::scan::{directions, geometric};
use super::theorem11::{lyapunov_generator, tilde_k_for, TildeK};
use super::{CheckConfig, Verdict, Witness};
use crate::error::{invalid, Result};
use crate::exec::map_indexed;
use crate::expr::{fd_derivative_bound, Region};
use crate::model::PeriodicSDEModel;

/// Sup over the far box may exceed the near-box sup by at most this factor for "bounded".
const GROWTH_TOLERANCE: f64 = 2.0;
const FAR_FACTOR: f64 = 10.0;
const BOX_TIMES: usize = 16;
const FD_STEP: f64 = 1e-5;
const DERIV_GRID: usize = 21;

/// Grid points of `[-l, l]^d`, `n` per axis (fewer for d >= 3).
fn box_points(d: usize, l: f64, n: usize) -> Vec<Vec<f64>> {
    let n = if d <= 2 { n } else { n.min(11) };
    let axis: Vec<f64> = (0..n).map(|i| -l + 2.0 * l * i as f64 / (n - 1) as f64).collect();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            (0..d)
                .map(|_| {
                    let v = axis[flat % n];
                    flat /= n;
                    v
                })
                .collect()
        })
        .collect()
}

fn box_times(model: &PeriodicSDEModel) -> Vec<f64> {
    if model.is_time_homogeneous() {
        vec![0.0]
    } else {
        (0..BOX_TIMES).map(|k| model.period() * k as f64 / BOX_TIMES as f64).collect()
    }
}

/// Grid maximum of `f(s, x)` over the box `[-l, l]^d` and the model's time grid.
fn box_max<F>(model: &PeriodicSDEModel, l: f64, cfg: &CheckConfig, times: &[f64], f: F) -> Result<Witness>
where
    F: Fn(f64, &[f64]) -> Result<f64> + Sync,
{
    let pts = box_points(model.dim(), l, cfg.box_n);
    let per_point: Vec<Result<Witness>> = map_indexed(pts.len(), cfg.execution, |i| {
        let mut best = Witness { s: 0.0, x: pts[i].clone(), value: f64::NEG_INFINITY };
        for &s in times {
            let v = f(s, &pts[i])?;
            if v > best.value {
                best.s = s;
                best.value = v;
            }
        }
        Ok(best)
    });
    let mut best: Option<Witness> = None;
    for w in per_point {
        let w = w?;
        if best.as_ref().is_none_or(|b| w.value > b.value) {
            best = Some(w);
        }
    }
    Ok(best.expect("non-empty box"))
}

/// Bounded if the far-box sup stays below the cap and within a factor of the near-box sup.
fn boundedness(near: f64, far: Witness, cap: f64) -> Verdict {
    let pass = far.value <= cap && far.value <= GROWTH_TOLERANCE * near + 1e-12;
    Verdict { pass, value: far.value, witness: Some(far) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AronsonReport {
    pub ellipticity: Verdict,
    pub bounded_coefficients: Verdict,
    pub bounded_first_derivatives: Verdict,
    pub box_half_width: f64,
    pub pass: bool,
}

/// Uniform ellipticity, boundedness of `b` and `a`, and boundedness of their first
/// derivatives, each judged on box grids of half width `L` and `10 L`.
pub fn check_aronson(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<AronsonReport> {
    cfg.validate()?;
    let l = cfg.box_half_width;
    let times = box_times(model);
    let ell = box_max(model, l, cfg, &[0.0], |_s, x| model.eval_diffusion(x).map(|e| -e.lambda_min))?;
    let lambda_min = -ell.value;
    let ellipticity = Verdict { pass: lambda_min > cfg.lambda_margin, value: lambda_min, witness: Some(Witness { value: lambda_min, ..ell }) };

    let coeff = |s: f64, x: &[f64]| -> Result<f64> {
        let b = model.eval_drift(s, x)?;
        let a = model.eval_diffusion(x)?.a;
        Ok(b.iter().chain(a.iter()).fold(0.0f64, |m, v| m.max(v.abs())))
    };
    let near = box_max(model, l, cfg, &times, coeff)?.value;
    let far = box_max(model, FAR_FACTOR * l, cfg, &times, coeff)?;
    let bounded_coefficients = boundedness(near, far, cfg.bound_cap);

    let deriv = |half_width: f64| -> Result<Witness> {
        let (d, period) = (model.dim(), if model.is_time_homogeneous() { 0.0 } else { model.period() });
        let region = Region { half_width, period };
        let mut best = Witness { s: 0.0, x: vec![0.0; d], value: 0.0 };
        let mut consider = |b: crate::expr::DerivativeBound| {
            if b.max() > best.value {
                best = Witness { s: b.argmax.0, x: b.argmax.1.clone(), value: b.max() };
            }
        };
        for i in 0..d {
            consider(fd_derivative_bound(|t, x: &[f64]| model.eval_drift(t, x).map(|b| b[i]), d, region, 1, DERIV_GRID, FD_STEP)?);
        }
        let region = Region { period: 0.0, ..region };
        for k in 0..d * d {
            consider(fd_derivative_bound(|_t, x: &[f64]| model.eval_diffusion(x).map(|e| e.a[k]), d, region, 1, DERIV_GRID, FD_STEP)?);
        }
        Ok(best)
    };
    let near_d = deriv(l)?.value;
    let bounded_first_derivatives = boundedness(near_d, deriv(FAR_FACTOR * l)?, cfg.bound_cap);
    let pass = ellipticity.pass && bounded_coefficients.pass && bounded_first_derivatives.pass;
    Ok(AronsonReport { ellipticity, bounded_coefficients, bounded_first_derivatives, box_half_width: l, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VeretennikovReport {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub lambda_trace: f64,
    /// max of `x.b(x)` over `|x| >= M`
    pub drift_sup_outside: f64,
    pub drift_condition: bool,
    pub eigen_condition: bool,
    pub pass: bool,
    /// max of `2 x.b + tr a` over `|x| >= M`, compared with `-2 lambda_plus`
    pub implied_generator_sup: f64,
    pub implied_inequality: bool,
    pub witness: Witness,
}

/// `x.b(x) <= -r` outside `|x| <= M` and `(3/2) lambda_+ < r - (Lambda - lambda_-)/2`.
pub fn check_veretennikov(model: &PeriodicSDEModel, m_radius: f64, r: f64, cfg: &CheckConfig) -> Result<VeretennikovReport> {
    cfg.validate()?;
    if !model.is_time_homogeneous() {
        return invalid("the condition applies to time-homogeneous drifts only");
    }
    if !(m_radius > 0.0 && r > 0.0) {
        return invalid(format!("need M > 0 and r > 0, got M={m_radius}, r={r}"));
    }
    let dirs = directions(model.dim(), cfg.angular_n);
    let r_ext = FAR_FACTOR * cfg.r_max.max(m_radius);
    let all = geometric(cfg.r_min, r_ext, cfg.radial_n);
    let outside = geometric(m_radius, r_ext.max(2.0 * m_radius), cfg.radial_n);

    let mut lm = f64::INFINITY;
    let mut lp = f64::NEG_INFINITY;
    let mut tr = f64::NEG_INFINITY;
    for &rad in &all {
        for u in &dirs {
            let x: Vec<f64> = u.iter().map(|c| c * rad).collect();
            let a = model.eval_diffusion(&x)?.a;
            let d = x.len();
            let q: f64 = (0..d).map(|i| (0..d).map(|j| x[i] * a[i * d + j] * x[j]).sum::<f64>()).sum::<f64>() / (rad * rad);
            lm = lm.min(q);
            lp = lp.max(q);
            tr = tr.max((0..d).map(|i| a[i * d + i]).sum());
        }
    }
    let mut drift_sup = Witness { s: 0.0, x: Vec::new(), value: f64::NEG_INFINITY };
    let mut gen_sup = f64::NEG_INFINITY;
    for &rad in &outside {
        for u in &dirs {
            let x: Vec<f64> = u.iter().map(|c| c * rad).collect();
            let b = model.eval_drift(0.0, &x)?;
            let v: f64 = x.iter().zip(&b).map(|(p, q)| p * q).sum();
            if v > drift_sup.value {
                drift_sup = Witness { s: 0.0, x: x.clone(), value: v };
            }
            gen_sup = gen_sup.max(lyapunov_generator(model, 0.0, &x)?);
        }
    }
    let drift_condition = drift_sup.value <= -r;
    let eigen_condition = 1.5 * lp < r - 0.5 * (tr - lm);
    Ok(VeretennikovReport {
        lambda_minus: lm,
        lambda_plus: lp,
        lambda_trace: tr,
        drift_sup_outside: drift_sup.value,
        drift_condition,
        eigen_condition,
        pass: drift_condition && eigen_condition,
        implied_generator_sup: gen_sup,
        implied_inequality: gen_sup < -2.0 * lp,
        witness: drift_sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Degenerate2dReport {
    /// `inf |sigma(x)|` on the box
    pub sigma_inf: Verdict,
    /// `inf |d b^2 / d x^1|` on the box and time grid
    pub cross_derivative_inf: Verdict,
    pub condition_i: bool,
    pub condition_ii: TildeK,
    pub pass: bool,
}

/// Hypoelliptic condition for `d = 2`, `m = 1` with noise in the first coordinate only.
pub fn check_degenerate_2d(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<Degenerate2dReport> {
    cfg.validate()?;
    if model.dim() != 2 || model.noise_dim() != 1 {
        return invalid(format!("need d = 2 and m = 1, got d={}, m={}", model.dim(), model.noise_dim()));
    }
    let l = cfg.box_half_width;
    for x in box_points(2, l, 9) {
        if model.eval_diffusion(&x)?.sigma[1] != 0.0 {
            return invalid(format!("second row of sigma is not zero at {x:?}"));
        }
    }
    let times = box_times(model);
    let s = box_max(model, l, cfg, &[0.0], |_s, x| model.eval_diffusion(x).map(|e| -e.sigma[0].abs()))?;
    let sigma_inf = Verdict { pass: -s.value > cfg.lambda_margin, value: -s.value, witness: Some(Witness { value: -s.value, ..s }) };
    let cross = box_max(model, l, cfg, &times, |t, x| {
        let hi = model.eval_drift(t, &[x[0] + FD_STEP, x[1]])?[1];
        let lo = model.eval_drift(t, &[x[0] - FD_STEP, x[1]])?[1];
        Ok(-((hi - lo) / (2.0 * FD_STEP)).abs())
    })?;
    let cross_derivative_inf =
        Verdict { pass: -cross.value > cfg.lambda_margin, value: -cross.value, witness: Some(Witness { value: -cross.value, ..cross }) };
    let f = |s: f64, x: &[f64]| lyapunov_generator(model, s, x);
    let condition_ii = tilde_k_for(&f, 2, model.period(), !model.is_time_homogeneous(), cfg)?;
    let condition_i = sigma_inf.pass && cross_derivative_inf.pass;
    let pass = condition_i && condition_ii.pass;
    Ok(Degenerate2dReport { sigma_inf, cross_derivative_inf, condition_i, condition_ii, pass })
}
