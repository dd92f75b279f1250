//! Time-free sufficient condition for drifts of the form `S(t) + b_hat(x)`.

use serde::Serialize;

use super::scan::{search_epsilon, Grid, RadialScan};
use super::{CheckConfig, Witness};
use crate::error::{invalid, Result};
use crate::model::{Dynamics, PeriodicSDEModel};
use crate::signal::Signal;

/// `G_S(x) = 2 sum_i (x_i^- max S_i^- + x_i^+ max S_i^+)`.
pub fn compute_g_s(signals: &[Signal], x: &[f64]) -> Result<f64> {
    if signals.len() != x.len() {
        return invalid(format!("{} signals for a state of length {}", signals.len(), x.len()));
    }
    Ok(2.0 * signals.iter().zip(x).map(|(s, &xi)| g_term(s.envelope(), xi)).sum::<f64>())
}

fn g_term((pos, neg): (f64, f64), xi: f64) -> f64 {
    (-xi).max(0.0) * neg + xi.max(0.0) * pos
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalConditionReport {
    pub pass: bool,
    pub epsilon: f64,
    pub radius: Option<f64>,
    pub witness: Option<Witness>,
    /// per-coordinate `(max S^+, max S^-)`
    pub envelopes: Vec<(f64, f64)>,
    pub note: String,
}

/// Scans `2 x.b_hat(x) + G_S(x) + tr a(x) < -eps` outside a ball. A pass
/// implies the time-dependent drift inequality with the same radius.
pub fn check_signal_condition(model: &PeriodicSDEModel, cfg: &CheckConfig) -> Result<SignalConditionReport> {
    cfg.validate()?;
    let Some(split) = model.signal_split() else {
        return invalid(format!("model `{}` has no signal/residual drift split", model.name()));
    };
    let envelopes: Vec<(f64, f64)> = split.signals.iter().map(Signal::envelope).collect();
    let (d, m) = (model.dim(), model.noise_dim());
    let f = |_s: f64, x: &[f64]| -> Result<f64> {
        let mut bh = vec![0.0; d];
        (split.residual)(x, &mut bh)?;
        let mut sigma = vec![0.0; d * m];
        Dynamics::diffusion(model, x, &mut sigma)?;
        let drift: f64 = x.iter().zip(&bh).map(|(a, b)| a * b).sum();
        let g: f64 = envelopes.iter().zip(x).map(|(&e, &xi)| g_term(e, xi)).sum();
        Ok(2.0 * drift + 2.0 * g + sigma.iter().map(|v| v * v).sum::<f64>())
    };
    let grid = Grid::new(d, model.period(), false, cfg);
    let scan = RadialScan::run(&grid, &f, cfg)?;
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None => search_epsilon(&scan, 1e-6, 1e3).unwrap_or(1e-6),
    };
    let (pass, radius, witness) = match scan.radius(&grid, &f, epsilon)? {
        Ok(r) => (true, Some(r), None),
        Err(w) => (false, None, Some(w)),
    };
    Ok(SignalConditionReport {
        pass,
        epsilon,
        radius,
        witness,
        envelopes,
        note: "a pass implies the drift inequality 2x.b(s,x) + tr a(x) < -eps outside the same ball".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog_model, ou_gauss, Param, ParamMap};
    use crate::signal::SignalShape;

    #[test]
    fn g_s_examples() {
        let sine = Signal::sine(1.0, 1.0).unwrap();
        assert_eq!(compute_g_s(&[sine], &[-3.0]).unwrap(), 6.0);
        assert_eq!(compute_g_s(&[Signal::zero(1.0).unwrap()], &[4.0]).unwrap(), 0.0);
        assert_eq!(compute_g_s(&[Signal::constant(2.0, 1.0).unwrap()], &[1.5]).unwrap(), 6.0);
        assert_eq!(compute_g_s(&[Signal::constant(2.0, 1.0).unwrap()], &[-1.5]).unwrap(), 0.0);
        assert!(compute_g_s(&[], &[1.0]).is_err());
    }

    #[test]
    fn ou_sine_radius_is_golden_ratio() {
        let cfg = CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() };
        let m = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let r = check_signal_condition(&m, &cfg).unwrap();
        assert!(r.pass);
        assert!((r.radius.unwrap() - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-6);
        let tk = super::super::find_tilde_k(&m, &cfg).unwrap();
        assert!((tk.radius - r.radius.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn radius_depends_only_on_envelope() {
        let cfg = CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() };
        let square = Signal::new(SignalShape::PiecewiseConstant { starts: vec![0.0, 0.5], values: vec![1.0, -1.0] }, 1.0).unwrap();
        let a = check_signal_condition(&ou_gauss(1.0, 1.0, square, None).unwrap(), &cfg).unwrap();
        let b = check_signal_condition(&ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap(), &cfg).unwrap();
        assert_eq!(a.radius, b.radius);
    }

    #[test]
    fn no_restoring_drift_fails() {
        let params: ParamMap = [
            ("d", Param::Number(1.0)),
            ("bhat1", Param::Text("0".into())),
            ("signal1", Param::Text("sin(2*pi*t)".into())),
            ("s1_1", Param::Text("1".into())),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let m = catalog_model("custom", &params).unwrap();
        let r = check_signal_condition(&m, &CheckConfig { epsilon: Some(1.0), ..CheckConfig::default() }).unwrap();
        assert!(!r.pass);
        assert!(r.witness.unwrap().value > 0.0);
    }
}
