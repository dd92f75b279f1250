//! The certificate pipeline: drift inequality outside a compact, the minimal
//! radius of the small set, and non-degeneracy of `a` on it.

use std::f64::consts::E;

use serde::Serialize;

use super::scan::{ball_radii, first_max, search_epsilon, Grid, RadialScan};
use super::{CheckConfig, Witness};
use crate::error::{invalid, Error, Result};
use crate::expr::{fd_derivative_bound, Region};
use crate::model::{Dynamics, PeriodicSDEModel};

const EPS_RANGE: (f64, f64) = (1e-6, 1e3);
/// Largest radius scanned for non-degeneracy when the minimal radius overflows.
const RADIUS_CAP: f64 = 1e300;
const C0_GRID: usize = 21;
const C0_STEP: f64 = 1e-4;

const FORMULA_NOTE: &str = "minimal radius uses the Bernstein exponent (log R - log R~ - C2 T)^2; \
the printed display squares C2 T instead, its value is given as log_r_printed_form";

/// `L_s V(x) = 2 x.b(s, x) + tr a(x)` for `V(x) = |x|^2`.
pub fn lyapunov_generator(model: &PeriodicSDEModel, s: f64, x: &[f64]) -> Result<f64> {
    if model.jumps().is_some() {
        return Err(Error::Unsupported("the diffusion generator does not cover jump parts".into()));
    }
    let b = model.eval_drift(s, x)?;
    let mut sigma = vec![0.0; model.dim() * model.noise_dim()];
    Dynamics::diffusion(model, x, &mut sigma)?;
    let drift: f64 = x.iter().zip(&b).map(|(xi, bi)| xi * bi).sum();
    Ok(2.0 * drift + sigma.iter().map(|v| v * v).sum::<f64>())
}

/// Compact `K~ = {|x| <= radius}` outside which the generator stays below `-epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TildeK {
    pub pass: bool,
    pub radius: f64,
    pub r_tilde: f64,
    pub epsilon: f64,
    pub epsilon_searched: bool,
    /// sup of `|L_s V|` over `[0, T] x K~`
    pub c_sup: f64,
    pub c_witness: Option<Witness>,
    /// on failure, the worst point beyond `r_max`
    pub failure_witness: Option<Witness>,
    /// the generator keeps decreasing over the outer part of the scan
    pub tail_decreasing: bool,
    pub radial_ratio: f64,
}

pub(crate) fn tilde_k_for<F>(f: &F, dim: usize, period: f64, time_dependent: bool, cfg: &CheckConfig) -> Result<TildeK>
where
    F: Fn(f64, &[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let grid = Grid::new(dim, period, time_dependent, cfg);
    let scan = RadialScan::run(&grid, f, cfg)?;
    let (epsilon, searched) = match cfg.epsilon {
        Some(e) => (e, false),
        None => match search_epsilon(&scan, EPS_RANGE.0, EPS_RANGE.1) {
            Some(e) => (e, true),
            None => (EPS_RANGE.0, true),
        },
    };
    let mut out = TildeK {
        pass: false,
        radius: f64::NAN,
        r_tilde: f64::NAN,
        epsilon,
        epsilon_searched: searched,
        c_sup: f64::NAN,
        c_witness: None,
        failure_witness: None,
        tail_decreasing: scan.tail_decreasing,
        radial_ratio: scan.radial_ratio(),
    };
    match scan.radius(&grid, f, epsilon)? {
        Ok(r) => {
            let abs = |s: f64, x: &[f64]| f(s, x).map(f64::abs);
            let (w, _) = grid.ball_max(&abs, r, cfg.radial_n)?;
            out.pass = true;
            out.radius = r;
            out.r_tilde = r.max(E);
            out.c_sup = w.value;
            out.c_witness = Some(w);
        }
        Err(w) => out.failure_witness = Some(w),
    }
    Ok(out)
}

/// Scans for the smallest radius outside which the drift inequality holds.
pub fn find_tilde_k(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<TildeK> {
    let f = |s: f64, x: &[f64]| lyapunov_generator(model, s, x);
    tilde_k_for(&f, model.dim(), model.period(), !model.is_time_homogeneous(), cfg)
}

/// `C2 = (2d)^{3/2} (m+1)^{1/2} C0 + 4 d^3 (m+1) C0^2`.
pub fn compute_c2(d: usize, m: usize, c0: f64) -> f64 {
    let (d, m1) = (d as f64, m as f64 + 1.0);
    (2.0 * d).powf(1.5) * m1.sqrt() * c0 + 4.0 * d.powi(3) * m1 * c0 * c0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimalR {
    /// may overflow to infinity; `log_r` stays finite
    pub r: f64,
    pub log_r: f64,
    pub log_r_bisection: f64,
    pub log_r_printed_form: f64,
    pub c2: f64,
    /// the inequality holds for every `R` above `R~ e^{C2 T}`
    pub trivial: bool,
}

/// Minimal `R` with `2 exp(-(log R - log R~ - C2 T)^2 / (16 d^3 (m+1) C0^2 T)) <= eps / (2 (C + eps))`.
pub fn compute_minimal_r(d: usize, m: usize, c0: f64, period: f64, r_tilde: f64, eps: f64, c: f64) -> Result<MinimalR> {
    if d == 0 || m == 0 {
        return invalid("dimensions must be >= 1");
    }
    if !(c0 >= 0.0 && period > 0.0 && eps > 0.0 && c >= 0.0) || ![c0, period, eps, c].iter().all(|v| v.is_finite()) {
        return invalid(format!("need C0 >= 0, T > 0, eps > 0, C >= 0; got C0={c0}, T={period}, eps={eps}, C={c}"));
    }
    if !(r_tilde >= E) {
        return invalid(format!("R~ must be >= e, got {r_tilde}"));
    }
    let c2 = compute_c2(d, m, c0);
    let base = r_tilde.ln() + c2 * period;
    let rhs = eps / (2.0 * (c + eps));
    let denom = 16.0 * (d as f64).powi(3) * (m as f64 + 1.0) * c0 * c0 * period;
    if denom == 0.0 || rhs >= 1.0 {
        let log_r = base + 1e-9_f64.ln_1p();
        return Ok(MinimalR { r: log_r.exp(), log_r, log_r_bisection: log_r, log_r_printed_form: log_r, c2, trivial: true });
    }
    let root = (denom * (4.0 * (c + eps) / eps).ln()).sqrt();
    let log_r = base + root;
    let holds = |u: f64| 2.0 * (-u * u / denom).exp() <= rhs;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while !holds(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-15 * (base.abs() + hi) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let log_r_printed_form = r_tilde.ln() + (c2 * period).powi(2) + root;
    Ok(MinimalR { r: log_r.exp(), log_r, log_r_bisection: base + hi, log_r_printed_form, c2, trivial: false })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nondegeneracy {
    pub pass: bool,
    pub lambda_min: f64,
    pub witness: Witness,
    /// spacing of the uniform part of the radial grid
    pub grid_step: f64,
    pub radius_scanned: f64,
    pub radius_capped: bool,
}

/// Grid minimum of the smallest eigenvalue of `a` over `{|x| <= radius}`.
pub fn check_nondegeneracy(model: &PeriodicSDEModel, radius: f64, cfg: &CheckConfig) -> Result<Nondegeneracy> {
    cfg.validate()?;
    if !(radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    let capped = !(radius <= RADIUS_CAP);
    let r = radius.min(RADIUS_CAP);
    let grid = Grid::new(model.dim(), model.period(), false, cfg);
    let neg_lambda = |_s: f64, x: &[f64]| model.eval_diffusion(x).map(|d| -d.lambda_min);
    let (radii, step) = ball_radii(r, cfg.radial_n);
    let w = first_max(grid.profile(&neg_lambda, &radii)?);
    let lambda_min = -w.value;
    Ok(Nondegeneracy {
        pass: lambda_min > cfg.lambda_margin,
        lambda_min,
        witness: Witness { value: lambda_min, ..w },
        grid_step: step,
        radius_scanned: r,
        radius_capped: capped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub lyapunov: bool,
    pub minimal_r: bool,
    pub nondegeneracy: bool,
    pub overall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witnesses {
    pub lyapunov_failure: Option<Witness>,
    pub c_sup: Option<Witness>,
    pub nondegeneracy: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInfo {
    pub r_min: f64,
    pub r_max: f64,
    pub r_ext: f64,
    pub radial_n: usize,
    pub angular_n: usize,
    pub time_n: usize,
    pub radial_ratio: f64,
    pub nondegeneracy_step: Option<f64>,
    pub nondegeneracy_radius_capped: bool,
    pub tail_decreasing: bool,
}

/// All constants of the certificate and the verdicts built from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem11Report {
    pub model: String,
    pub dim: usize,
    pub noise_dim: usize,
    pub noise_covers_state: bool,
    pub epsilon: f64,
    pub epsilon_searched: bool,
    pub scan_radius: Option<f64>,
    pub r_tilde: Option<f64>,
    pub c_sup: Option<f64>,
    pub c0: f64,
    pub c0_estimated: bool,
    pub c2: f64,
    pub r_minimal: Option<f64>,
    pub log_r_minimal: Option<f64>,
    pub log_r_bisection: Option<f64>,
    pub log_r_printed_form: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_margin: f64,
    pub verdicts: Verdicts,
    pub witnesses: Witnesses,
    pub grid: GridInfo,
    pub notes: Vec<String>,
}

/// Finite-difference lower estimate of the derivative bound: orders 1 and 2
/// of every drift and diffusion entry on the configured box.
pub fn estimate_c0(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<f64> {
    let (d, m) = (model.dim(), model.noise_dim());
    let region = Region { half_width: cfg.box_half_width, period: model.period() };
    let grid_n = if d <= 2 { C0_GRID } else { 7 };
    let mut b_max = 0.0f64;
    for i in 0..d {
        let f = |t: f64, x: &[f64]| model.eval_drift(t, x).map(|b| b[i]);
        b_max = b_max.max(fd_derivative_bound(f, d, region, 2, grid_n, C0_STEP)?.max());
    }
    let mut s_max = 0.0f64;
    let region = Region { period: 0.0, ..region };
    for k in 0..d * m {
        let f = |_t: f64, x: &[f64]| model.eval_diffusion(x).map(|e| e.sigma[k]);
        s_max = s_max.max(fd_derivative_bound(f, d, region, 2, grid_n, C0_STEP)?.max());
    }
    Ok(b_max + s_max)
}

/// Runs the drift scan, the minimal-radius computation and the non-degeneracy scan.
pub fn check_theorem11(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<Theorem11Report> {
    cfg.validate()?;
    let mut notes = vec![FORMULA_NOTE.to_string(), "suprema and infima are grid-sampled; verdicts hold on the grid".to_string()];
    let (c0, c0_estimated) = match cfg.c0.or(model.declared_c0()) {
        Some(c0) => (c0, false),
        None => {
            let c0 = estimate_c0(model, cfg)?;
            notes.push(format!("C0 not declared; finite-difference estimate {c0:.6} (orders 1-2 only, a lower bound)"));
            (c0, true)
        }
    };
    if !model.noise_covers_state() {
        notes.push("noise dimension is smaller than the state dimension".into());
    }
    let tk = find_tilde_k(model, cfg)?;
    let c2 = compute_c2(model.dim(), model.noise_dim(), c0);
    let mut report = Theorem11Report {
        model: model.name().to_string(),
        dim: model.dim(),
        noise_dim: model.noise_dim(),
        noise_covers_state: model.noise_covers_state(),
        epsilon: tk.epsilon,
        epsilon_searched: tk.epsilon_searched,
        scan_radius: tk.pass.then_some(tk.radius),
        r_tilde: tk.pass.then_some(tk.r_tilde),
        c_sup: tk.pass.then_some(tk.c_sup),
        c0,
        c0_estimated,
        c2,
        r_minimal: None,
        log_r_minimal: None,
        log_r_bisection: None,
        log_r_printed_form: None,
        lambda_min: None,
        lambda_margin: cfg.lambda_margin,
        verdicts: Verdicts { lyapunov: tk.pass, minimal_r: false, nondegeneracy: false, overall: false },
        witnesses: Witnesses { lyapunov_failure: tk.failure_witness.clone(), c_sup: tk.c_witness.clone(), nondegeneracy: None },
        grid: GridInfo {
            r_min: cfg.r_min,
            r_max: cfg.r_max,
            r_ext: 10.0 * cfg.r_max,
            radial_n: cfg.radial_n,
            angular_n: cfg.angular_n,
            time_n: if model.is_time_homogeneous() { 1 } else { cfg.time_n },
            radial_ratio: tk.radial_ratio,
            nondegeneracy_step: None,
            nondegeneracy_radius_capped: false,
            tail_decreasing: tk.tail_decreasing,
        },
        notes,
    };
    if !tk.pass {
        report.notes.push("no radius in the search range satisfies the drift inequality".into());
        return Ok(report);
    }
    let mr = compute_minimal_r(model.dim(), model.noise_dim(), c0, model.period(), tk.r_tilde, tk.epsilon, tk.c_sup)?;
    report.r_minimal = Some(mr.r);
    report.log_r_minimal = Some(mr.log_r);
    report.log_r_bisection = Some(mr.log_r_bisection);
    report.log_r_printed_form = Some(mr.log_r_printed_form);
    let agree = (mr.log_r - mr.log_r_bisection).abs() <= 1e-9 * mr.log_r.abs().max(1.0);
    report.verdicts.minimal_r = agree && mr.log_r > tk.r_tilde.ln();

    let nd = check_nondegeneracy(model, mr.r, cfg)?;
    report.lambda_min = Some(nd.lambda_min);
    report.grid.nondegeneracy_step = Some(nd.grid_step);
    report.grid.nondegeneracy_radius_capped = nd.radius_capped;
    report.witnesses.nondegeneracy = Some(nd.witness);
    report.verdicts.nondegeneracy = nd.pass;
    report.verdicts.overall = report.verdicts.lyapunov && report.verdicts.minimal_r && report.verdicts.nondegeneracy;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gbm, ou_gauss};
    use crate::signal::Signal;

    fn ou_sine() -> PeriodicSDEModel {
        ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), Some(1.0)).unwrap()
    }

    #[test]
    fn generator_examples() {
        let ou = ou_gauss(1.0, 1.0, Signal::zero(1.0).unwrap(), None).unwrap();
        assert_eq!(lyapunov_generator(&ou, 0.3, &[2.0]).unwrap(), -7.0);
        assert_eq!(lyapunov_generator(&ou, 0.0, &[0.0]).unwrap(), 1.0);
        let g = gbm(-1.0, 1.0, 1.0, None).unwrap();
        assert_eq!(lyapunov_generator(&g, 0.5, &[3.0]).unwrap(), -9.0);
    }

    #[test]
    fn tilde_k_for_sinusoidal_ou() {
        let cfg = CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() };
        let tk = find_tilde_k(&ou_sine(), &cfg).unwrap();
        assert!(tk.pass);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((tk.radius - golden).abs() < 1e-6, "{}", tk.radius);
        assert_eq!(tk.r_tilde, E);
        // sup |2x sin - 2x^2 + 1| on |x| <= golden
        let dense = {
            let mut best = 0.0f64;
            for i in 0..=2000 {
                let x = -golden + 2.0 * golden * i as f64 / 2000.0;
                for k in 0..400 {
                    let s = (2.0 * std::f64::consts::PI * k as f64 / 400.0).sin();
                    best = best.max((2.0 * x * s - 2.0 * x * x + 1.0).abs());
                }
            }
            best
        };
        assert!((tk.c_sup - dense).abs() < 1e-2, "{} vs {}", tk.c_sup, dense);
        assert!((tk.c_sup - 7.47).abs() < 1e-2);
    }

    #[test]
    fn tilde_k_for_gbm() {
        let cfg = CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() };
        let tk = find_tilde_k(&gbm(-1.0, 1.0, 1.0, None).unwrap(), &cfg).unwrap();
        assert!(tk.pass);
        assert!((tk.radius - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tilde_k_failure_has_witness() {
        let g = gbm(1.0, 1.0, 1.0, None).unwrap();
        let tk = find_tilde_k(&g, &CheckConfig::default()).unwrap();
        assert!(!tk.pass);
        assert!(tk.failure_witness.unwrap().value > 0.0);
    }

    #[test]
    fn radius_monotone_in_epsilon() {
        let m = ou_sine();
        let mut last = f64::INFINITY;
        for eps in [10.0, 3.0, 1.0, 0.1] {
            let cfg = CheckConfig { epsilon: Some(eps), radial_n: 100, ..CheckConfig::default() };
            let r = find_tilde_k(&m, &cfg).unwrap().radius;
            assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn c2_examples() {
        assert!((compute_c2(1, 1, 1.0) - 12.0).abs() < 1e-12);
        assert_eq!(compute_c2(3, 2, 0.0), 0.0);
        assert!((compute_c2(2, 2, 1.0) - (8.0 * 3f64.sqrt() + 96.0)).abs() < 1e-12);
    }

    #[test]
    fn minimal_r_example() {
        let mr = compute_minimal_r(1, 1, 1.0, 1.0, E, 1.0, 10.0).unwrap();
        let expected = 13.0 + (32.0 * 44f64.ln()).sqrt();
        assert!((mr.log_r - expected).abs() < 1e-12);
        assert!((mr.log_r - 24.0043).abs() < 1e-3);
        assert!((mr.r / 2.67e10 - 1.0).abs() < 5e-3);
        assert!((mr.log_r - mr.log_r_bisection).abs() < 1e-9);
        assert!(!mr.trivial);
        assert!(mr.log_r_printed_form > mr.log_r);
    }

    #[test]
    fn minimal_r_edge_cases() {
        let mr = compute_minimal_r(1, 1, 0.0, 1.0, E, 1.0, 10.0).unwrap();
        assert!(mr.trivial && (mr.r / E - 1.0 - 1e-9).abs() < 1e-12);
        assert!(compute_minimal_r(1, 1, 1.0, 1.0, 2.0, 1.0, 10.0).is_err());
        assert!(compute_minimal_r(1, 1, 1.0, 1.0, E, 0.0, 10.0).is_err());
        // eps -> infinity: radius shrinks monotonically
        let mut last = f64::INFINITY;
        for eps in [1.0, 10.0, 1e3, 1e6, 1e12] {
            let r = compute_minimal_r(1, 1, 1.0, 1.0, E, eps, 10.0).unwrap().log_r;
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn nondegeneracy_examples() {
        let cfg = CheckConfig::default();
        let ou = ou_gauss(1.0, 1.0, Signal::zero(1.0).unwrap(), None).unwrap();
        let nd = check_nondegeneracy(&ou, 50.0, &cfg).unwrap();
        assert!(nd.pass && nd.lambda_min == 1.0);
        let g = gbm(-1.0, 1.0, 1.0, None).unwrap();
        let nd = check_nondegeneracy(&g, 1e10, &cfg).unwrap();
        assert!(!nd.pass);
        assert_eq!(nd.lambda_min, 0.0);
        assert!(nd.witness.x[0].abs() <= nd.grid_step);
    }

    #[test]
    fn theorem11_ou_and_gbm() {
        let cfg = CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() };
        let r = check_theorem11(&ou_sine(), &cfg).unwrap();
        assert!(r.verdicts.overall, "{r:?}");
        assert_eq!(r.r_tilde, Some(E));
        assert!(r.log_r_minimal.unwrap() > 1.0);

        let g = gbm(-1.0, 1.0, 1.0, Some(1.0)).unwrap();
        let r = check_theorem11(&g, &CheckConfig::default()).unwrap();
        assert!(r.verdicts.lyapunov && r.verdicts.minimal_r);
        assert!(!r.verdicts.nondegeneracy && !r.verdicts.overall);
        assert!(r.witnesses.nondegeneracy.unwrap().x[0].abs() <= r.grid.nondegeneracy_step.unwrap());
    }

    #[test]
    fn c0_estimate_for_ou() {
        let ou = ou_gauss(2.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let c0 = estimate_c0(&ou, &CheckConfig::default()).unwrap();
        assert!((c0 - 2.0).abs() < 1e-4, "{c0}");
    }
}
