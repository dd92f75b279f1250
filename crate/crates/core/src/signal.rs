use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::expr::{Env, Expr};
use crate::time::wrap_unchecked;

#[derive(Debug, Clone, PartialEq)]
pub enum SignalShape {
    Constant(f64),
    /// `offset + amplitude * sin(2 pi t / T + phase)`
    Sinusoid { amplitude: f64, phase: f64, offset: f64 },
    /// `values[i]` on `[starts[i], starts[i + 1])`, with `starts[0] == 0`.
    PiecewiseConstant { starts: Vec<f64>, values: Vec<f64> },
    /// Expression in `t` (and bound parameters), evaluated at `t mod T`.
    Expr { expr: Expr, params: Vec<f64> },
}

/// A scalar deterministic T-periodic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    shape: SignalShape,
    period: f64,
}

const EXTREMA_GRID: usize = 4096;

impl Signal {
    pub fn new(shape: SignalShape, period: f64) -> Result<Signal> {
        if !(period > 0.0 && period.is_finite()) {
            return invalid(format!("signal period must be positive, got {period}"));
        }
        match &shape {
            SignalShape::PiecewiseConstant { starts, values } => {
                if starts.is_empty() || starts.len() != values.len() {
                    return invalid("piecewise signal needs one value per start");
                }
                if starts[0] != 0.0 {
                    return invalid("piecewise signal must start at 0");
                }
                if !starts.windows(2).all(|w| w[0] < w[1]) || *starts.last().unwrap() >= period {
                    return invalid("piecewise starts must increase within [0, T)");
                }
            }
            SignalShape::Expr { expr, params } => {
                if expr.dim() != 0 {
                    return invalid("signal expressions may only depend on t");
                }
                if params.len() != expr.params().len() {
                    return invalid("signal expression parameter count mismatch");
                }
            }
            _ => {}
        }
        Ok(Signal { shape, period })
    }

    pub fn zero(period: f64) -> Result<Signal> {
        Signal::new(SignalShape::Constant(0.0), period)
    }

    pub fn constant(c: f64, period: f64) -> Result<Signal> {
        Signal::new(SignalShape::Constant(c), period)
    }

    /// `amplitude * sin(2 pi t / T)`.
    pub fn sine(amplitude: f64, period: f64) -> Result<Signal> {
        Signal::new(SignalShape::Sinusoid { amplitude, phase: 0.0, offset: 0.0 }, period)
    }

    pub fn shape(&self) -> &SignalShape {
        &self.shape
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, SignalShape::Constant(c) if c == 0.0)
    }

    /// Signal value at `t` (any real; evaluated at `t mod T`).
    pub fn value(&self, t: f64) -> f64 {
        let s = wrap_unchecked(t, self.period);
        match &self.shape {
            SignalShape::Constant(c) => *c,
            SignalShape::Sinusoid { amplitude, phase, offset } => offset + amplitude * (2.0 * PI * s / self.period + phase).sin(),
            SignalShape::PiecewiseConstant { starts, values } => {
                let idx = starts.partition_point(|&b| b <= s);
                values[idx.saturating_sub(1)]
            }
            SignalShape::Expr { expr, params } => expr.eval(&Env::new(s, &[], params)).unwrap_or(f64::NAN),
        }
    }

    /// Points in `[a, b]` where the signal may be discontinuous.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let within_period: Vec<f64> = match &self.shape {
            SignalShape::Constant(_) | SignalShape::Sinusoid { .. } => return Vec::new(),
            SignalShape::PiecewiseConstant { starts, .. } => starts.clone(),
            SignalShape::Expr { .. } => vec![0.0],
        };
        let mut out = Vec::new();
        let k0 = (a / self.period).floor() as i64 - 1;
        let k1 = (b / self.period).ceil() as i64 + 1;
        for k in k0..=k1 {
            for &s in &within_period {
                let p = k as f64 * self.period + s;
                if p >= a && p <= b {
                    out.push(p);
                }
            }
        }
        out
    }

    /// `(max S^+, max S^-)` over one period: the largest positive part and the
    /// largest negative part. Exact for built-in shapes; grid-sampled for expressions.
    pub fn envelope(&self) -> (f64, f64) {
        match &self.shape {
            SignalShape::Constant(c) => (c.max(0.0), (-c).max(0.0)),
            SignalShape::Sinusoid { amplitude, offset, .. } => {
                let hi = offset + amplitude.abs();
                let lo = offset - amplitude.abs();
                (hi.max(0.0), (-lo).max(0.0))
            }
            SignalShape::PiecewiseConstant { values, .. } => {
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                (hi.max(0.0), (-lo).max(0.0))
            }
            SignalShape::Expr { .. } => {
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..EXTREMA_GRID {
                    let v = self.value(self.period * i as f64 / EXTREMA_GRID as f64);
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
                (hi.max(0.0), (-lo).max(0.0))
            }
        }
    }

    /// `sup |S|` over one period.
    pub fn sup_abs(&self) -> f64 {
        let (p, n) = self.envelope();
        p.max(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn sine_values() {
        let s = Signal::sine(1.0, 1.0).unwrap();
        assert!((s.value(0.25) - 1.0).abs() < 1e-15);
        assert!((s.value(1.25) - 1.0).abs() < 1e-14);
        assert_eq!(s.envelope(), (1.0, 1.0));
    }

    #[test]
    fn piecewise() {
        let s = Signal::new(SignalShape::PiecewiseConstant { starts: vec![0.0, 0.5], values: vec![2.0, -1.0] }, 1.0).unwrap();
        assert_eq!(s.value(0.1), 2.0);
        assert_eq!(s.value(0.5), -1.0);
        assert_eq!(s.value(1.7), -1.0);
        assert_eq!(s.envelope(), (2.0, 1.0));
        assert_eq!(s.breakpoints(0.0, 2.0), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn expression_signal_is_wrapped() {
        let e = parse("t", 0, &[]).unwrap();
        let s = Signal::new(SignalShape::Expr { expr: e, params: vec![] }, 2.0).unwrap();
        assert!((s.value(5.5) - 1.5).abs() < 1e-15);
        let (hi, lo) = s.envelope();
        assert!(hi > 1.99 && lo == 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Signal::new(SignalShape::PiecewiseConstant { starts: vec![0.1], values: vec![1.0] }, 1.0).is_err());
        assert!(Signal::new(SignalShape::PiecewiseConstant { starts: vec![0.0, 1.0], values: vec![1.0, 2.0] }, 1.0).is_err());
        assert!(Signal::constant(1.0, 0.0).is_err());
        let e = parse("x1", 1, &[]).unwrap();
        assert!(Signal::new(SignalShape::Expr { expr: e, params: vec![] }, 1.0).is_err());
    }
}
