//! Periodic SDE models `dX = b(t, X) dt + sigma(X) dW (+ dZ)` and the built-in catalog.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::expr::{self, Env, Expr};
use crate::signal::{Signal, SignalShape};
use crate::time::{wrap_time, wrap_unchecked};

/// Drift field evaluated at a phase in `[0, T)`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + Send + Sync>;
/// Diffusion field writing a row-major `d x m` matrix.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync>;
/// Time-free part of a drift, `b_hat(x)`.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync>;

/// The coefficient interface the path simulators run on.
///
/// [`PeriodicSDEModel`] reduces `t` modulo the period before evaluating the
/// drift; other implementations (test fixtures, wrappers) need not.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn period(&self) -> f64;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn diffusion(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn jumps(&self) -> Option<&JumpPart> {
        None
    }
}

/// Jump-size law of a compound Poisson process.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpSize {
    Constant(f64),
    Normal { mean: f64, sd: f64 },
    /// positive jumps with the given rate
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl JumpSize {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpSize::Constant(v) => v,
            JumpSize::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            JumpSize::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            JumpSize::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpSize::Constant(v) => v.is_finite() && v != 0.0,
            JumpSize::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            JumpSize::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            JumpSize::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation { name: "jump".into(), reason: format!("invalid jump-size law {self:?}") })
        }
    }

    /// Parses `const:v`, `normal:mean,sd`, `exp:rate` or `uniform:lo,hi`.
    pub fn parse(text: &str) -> Result<JumpSize> {
        let bad = || Error::Validation {
            name: "jump".into(),
            reason: format!("expected const:v | normal:m,s | exp:rate | uniform:lo,hi, got `{text}`"),
        };
        let (kind, args) = text.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let law = match (kind.trim(), nums.as_slice()) {
            ("const", [v]) => JumpSize::Constant(*v),
            ("normal", [m, s]) => JumpSize::Normal { mean: *m, sd: *s },
            ("exp", [r]) => JumpSize::Exponential { rate: *r },
            ("uniform", [lo, hi]) => JumpSize::Uniform { lo: *lo, hi: *hi },
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }

    /// `E[J; |J| <= 1]`
    pub fn small_jump_mean(&self) -> f64 {
        match *self {
            JumpSize::Constant(v) => {
                if v.abs() <= 1.0 {
                    v
                } else {
                    0.0
                }
            }
            _ => self.expect_over(|x| if x.abs() <= 1.0 { x } else { 0.0 }),
        }
    }

    /// `E[min(J^2, eps^2)]`
    pub fn truncated_second_moment(&self, eps: f64) -> f64 {
        let e2 = eps * eps;
        match *self {
            JumpSize::Constant(v) => (v * v).min(e2),
            _ => self.expect_over(|x| (x * x).min(e2)),
        }
    }

    /// `E[|J|; |J| > 1]`
    pub fn large_abs_moment(&self) -> f64 {
        match *self {
            JumpSize::Constant(v) => {
                if v.abs() > 1.0 {
                    v.abs()
                } else {
                    0.0
                }
            }
            _ => self.expect_over(|x| if x.abs() > 1.0 { x.abs() } else { 0.0 }),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            JumpSize::Constant(v) => v,
            JumpSize::Normal { mean, .. } => mean,
            JumpSize::Exponential { rate } => 1.0 / rate,
            JumpSize::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    // expectation of g(J) for the continuous laws, by quadrature with kinks at -eps.. handled adaptively
    fn expect_over(&self, g: impl Fn(f64) -> f64) -> f64 {
        use crate::quadrature::{integrate, QuadOptions};
        let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 };
        let (lo, hi, pdf): (f64, f64, Box<dyn Fn(f64) -> f64>) = match *self {
            JumpSize::Constant(_) => unreachable!(),
            JumpSize::Normal { mean, sd } => (
                mean - 40.0 * sd,
                mean + 40.0 * sd,
                Box::new(move |x: f64| (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())),
            ),
            JumpSize::Exponential { rate } => (0.0, 60.0 / rate, Box::new(move |x: f64| rate * (-rate * x).exp())),
            JumpSize::Uniform { lo, hi } => (lo, hi, Box::new(move |_x: f64| 1.0 / (hi - lo))),
        };
        integrate(|x| g(x) * pdf(x), lo, hi, &[-1.0, 0.0, 1.0], opts).map(|r| r.value).unwrap_or(f64::NAN)
    }
}

/// Finite-activity compound Poisson jump part `Z`.
///
/// With `compensate_small_jumps` the process is `sum of jumps - t * rate * E[J; |J| <= 1]`;
/// otherwise it is the raw jump sum.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPart {
    pub rate: f64,
    pub size: JumpSize,
    pub compensate_small_jumps: bool,
}

impl JumpPart {
    pub fn new(rate: f64, size: JumpSize, compensate_small_jumps: bool) -> Result<JumpPart> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Validation { name: "jump_rate".into(), reason: format!("must be finite and >= 0, got {rate}") });
        }
        size.validate()?;
        Ok(JumpPart { rate, size, compensate_small_jumps })
    }

    /// Deterministic drift of `Z` per unit time.
    pub fn compensator_rate(&self) -> f64 {
        if self.compensate_small_jumps {
            self.rate * self.size.small_jump_mean()
        } else {
            0.0
        }
    }

    /// `E[Z_1]`
    pub fn mean_rate(&self) -> f64 {
        self.rate * self.size.mean() - self.compensator_rate()
    }
}

/// Structural information about catalog models, used by the checkers and exact samplers.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    OuGauss { gamma: f64, sigma: f64, signal: Signal },
    OuLevy { gamma: f64, signal: Signal },
    Pearson { theta: f64, c0: f64, c1: f64, signal: Signal },
    Gbm { mu: f64, sigma: f64 },
    Degenerate2d,
    Custom,
}

/// Split `b(t, x) = S(t) + b_hat(x)` of a drift.
#[derive(Clone)]
pub struct SignalSplit {
    pub signals: Vec<Signal>,
    pub residual: FieldFn,
}

impl fmt::Debug for SignalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignalSplit").field("signals", &self.signals).finish_non_exhaustive()
    }
}

/// An SDE with T-periodic drift. Immutable once built.
#[derive(Clone)]
pub struct PeriodicSDEModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    period: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jumps: Option<JumpPart>,
    declared_c0: Option<f64>,
    kind: ModelKind,
    time_homogeneous: bool,
    split: Option<SignalSplit>,
}

impl fmt::Debug for PeriodicSDEModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicSDEModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("period", &self.period)
            .field("jumps", &self.jumps)
            .field("declared_c0", &self.declared_c0)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Result of evaluating the diffusion coefficient at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEval {
    /// row-major `d x m`
    pub sigma: Vec<f64>,
    /// row-major `d x d`, `sigma sigma^T`
    pub a: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl DiffusionEval {
    pub fn trace(&self) -> f64 {
        let d = (self.a.len() as f64).sqrt() as usize;
        (0..d).map(|i| self.a[i * d + i]).sum()
    }
}

/// Builder for models with user-supplied coefficient closures.
pub struct ModelBuilder {
    model: PeriodicSDEModel,
}

impl ModelBuilder {
    pub fn new(name: &str, dim: usize, noise_dim: usize, period: f64, drift: DriftFn, diffusion: DiffusionFn) -> ModelBuilder {
        ModelBuilder {
            model: PeriodicSDEModel {
                name: name.to_string(),
                dim,
                noise_dim,
                period,
                drift,
                diffusion,
                jumps: None,
                declared_c0: None,
                kind: ModelKind::Custom,
                time_homogeneous: false,
                split: None,
            },
        }
    }

    pub fn jumps(mut self, jumps: JumpPart) -> Self {
        self.model.jumps = Some(jumps);
        self
    }

    pub fn declared_c0(mut self, c0: Option<f64>) -> Self {
        self.model.declared_c0 = c0;
        self
    }

    pub fn kind(mut self, kind: ModelKind) -> Self {
        self.model.kind = kind;
        self
    }

    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.model.time_homogeneous = yes;
        self
    }

    pub fn signal_split(mut self, split: SignalSplit) -> Self {
        self.model.split = Some(split);
        self
    }

    pub fn build(self) -> Result<PeriodicSDEModel> {
        let m = self.model;
        if m.dim == 0 || m.noise_dim == 0 {
            return invalid(format!("dimensions must be >= 1, got d={}, m={}", m.dim, m.noise_dim));
        }
        if !(m.period > 0.0 && m.period.is_finite()) {
            return invalid(format!("period must be positive, got {}", m.period));
        }
        if let Some(c0) = m.declared_c0 {
            if !(c0 >= 0.0 && c0.is_finite()) {
                return Err(Error::Validation { name: "declared_c0".into(), reason: format!("must be >= 0, got {c0}") });
            }
        }
        if m.jumps.is_some() && m.dim != 1 {
            return Err(Error::Unsupported("jump parts are supported for d = 1 only".into()));
        }
        Ok(m)
    }
}

impl PeriodicSDEModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn jumps(&self) -> Option<&JumpPart> {
        self.jumps.as_ref()
    }

    pub fn declared_c0(&self) -> Option<f64> {
        self.declared_c0
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    pub fn signal_split(&self) -> Option<&SignalSplit> {
        self.split.as_ref()
    }

    /// True when the noise dimension is at least the state dimension.
    pub fn noise_covers_state(&self) -> bool {
        self.noise_dim >= self.dim
    }

    /// `b(i_T(t), x)`.
    pub fn eval_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return invalid(format!("state has length {}, model dimension is {}", x.len(), self.dim));
        }
        let phase = wrap_time(t, self.period)?;
        let mut out = vec![0.0; self.dim];
        self.drift_checked(phase, t, x, &mut out)?;
        Ok(out)
    }

    fn drift_checked(&self, phase: f64, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let fail = |reason: String| Error::Evaluation { t, x: x.to_vec(), reason };
        (self.drift)(phase, x, out).map_err(|e| fail(e.to_string()))?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite drift {out:?}")));
        }
        Ok(())
    }

    /// `sigma(x)`, `a(x) = sigma sigma^T` and the extreme eigenvalues of `a(x)`.
    pub fn eval_diffusion(&self, x: &[f64]) -> Result<DiffusionEval> {
        if x.len() != self.dim {
            return invalid(format!("state has length {}, model dimension is {}", x.len(), self.dim));
        }
        let (d, m) = (self.dim, self.noise_dim);
        let mut sigma = vec![0.0; d * m];
        Dynamics::diffusion(self, x, &mut sigma)?;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
        let (lambda_min, lambda_max) = extreme_eigenvalues(&a, d);
        Ok(DiffusionEval { sigma, a, lambda_min, lambda_max })
    }
}

impl Dynamics for PeriodicSDEModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let phase = wrap_unchecked(t, self.period);
        self.drift_checked(phase, t, x, out)
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let fail = |reason: String| Error::Evaluation { t: f64::NAN, x: x.to_vec(), reason };
        (self.diffusion)(x, out).map_err(|e| fail(e.to_string()))?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite diffusion {out:?}")));
        }
        Ok(())
    }

    fn jumps(&self) -> Option<&JumpPart> {
        self.jumps.as_ref()
    }
}

/// Smallest and largest eigenvalue of a symmetric PSD matrix, the smallest clamped at 0.
pub fn extreme_eigenvalues(a: &[f64], d: usize) -> (f64, f64) {
    let (lo, hi) = match d {
        1 => (a[0], a[0]),
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let mean = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            let hi = mean + rad;
            // product form avoids cancellation in the small root
            let det = p * r - q * q;
            let lo = if hi > 0.0 { det / hi } else { mean - rad };
            (lo.min(hi), hi)
        }
        _ => {
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, a));
            let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    (lo.max(0.0), hi.max(0.0))
}

/// Catalog parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Number(f64),
    Text(String),
}

pub type ParamMap = BTreeMap<String, Param>;

struct Params<'a> {
    map: &'a ParamMap,
}

impl<'a> Params<'a> {
    fn missing(name: &str) -> Error {
        Error::Validation { name: name.into(), reason: "required parameter is missing".into() }
    }

    fn number(&self, name: &str) -> Result<Option<f64>> {
        match self.map.get(name) {
            None => Ok(None),
            Some(Param::Number(v)) => Ok(Some(*v)),
            Some(Param::Text(s)) => s
                .trim()
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Validation { name: name.into(), reason: format!("expected a number, got `{s}`") }),
        }
    }

    fn required(&self, name: &str) -> Result<f64> {
        self.number(name)?.ok_or_else(|| Self::missing(name))
    }

    fn positive(&self, name: &str) -> Result<f64> {
        let v = self.required(name)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Validation { name: name.into(), reason: format!("must be > 0, got {v}") });
        }
        Ok(v)
    }

    fn text(&self, name: &str) -> Option<String> {
        match self.map.get(name) {
            None => None,
            Some(Param::Number(v)) => Some(format!("{v:?}")),
            Some(Param::Text(s)) => Some(s.clone()),
        }
    }

    fn period(&self) -> Result<f64> {
        match self.number("T")? {
            None => Ok(1.0),
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(Error::Validation { name: "T".into(), reason: format!("must be > 0, got {v}") }),
        }
    }

    fn declared_c0(&self) -> Result<Option<f64>> {
        self.number("declared_c0")
    }

    /// Numeric entries usable as expression parameters.
    fn expression_scope(&self) -> (Vec<String>, Vec<f64>) {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (k, v) in self.map {
            if let Param::Number(x) = v {
                if expr::parse("0", 1, &[k.as_str()]).is_ok() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    names.push(k.clone());
                    values.push(*x);
                }
            }
        }
        (names, values)
    }
}

/// Builds a signal from an expression in `t` (with parameter `T` bound to the period).
pub fn signal_from_text(name: &str, text: &str, period: f64) -> Result<Signal> {
    let e = expr::parse(text, 0, &["T"]).map_err(|err| Error::Validation { name: name.into(), reason: err.to_string() })?;
    if !e.uses_time() {
        let c = e.eval(&Env::new(0.0, &[], &[period]))?;
        return Signal::constant(c, period);
    }
    Signal::new(SignalShape::Expr { expr: e, params: vec![period] }, period)
}

fn signal_param(p: &Params<'_>, name: &str, default: &str, period: f64) -> Result<Signal> {
    let text = p.text(name).unwrap_or_else(|| default.to_string());
    signal_from_text(name, &text, period)
}

fn expr_param(p: &Params<'_>, key: &str, default: Option<&str>, dim: usize, scope: &[String]) -> Result<Expr> {
    let text = p.text(key).or_else(|| default.map(str::to_string)).ok_or_else(|| Params::missing(key))?;
    let names: Vec<&str> = scope.iter().map(String::as_str).collect();
    expr::parse(&text, dim, &names).map_err(|err| Error::Validation { name: key.into(), reason: err.to_string() })
}

/// Instantiates a catalog model: `ou-gauss`, `ou-levy`, `pearson`, `gbm`,
/// `degenerate2d` or `custom`.
pub fn catalog_model(name: &str, params: &ParamMap) -> Result<PeriodicSDEModel> {
    let p = Params { map: params };
    match name {
        "ou-gauss" => {
            let gamma = p.positive("gamma")?;
            let sigma = p.positive("sigma")?;
            let period = p.period()?;
            let signal = signal_param(&p, "signal", "0", period)?;
            ou_gauss(gamma, sigma, signal, p.declared_c0()?)
        }
        "ou-levy" => {
            let gamma = p.positive("gamma")?;
            let period = p.period()?;
            let signal = signal_param(&p, "signal", "0", period)?;
            let rate = p.required("jump_rate")?;
            let size = JumpSize::parse(&p.text("jump").ok_or_else(|| Params::missing("jump"))?)?;
            let compensate = p.number("compensate")?.unwrap_or(0.0) != 0.0;
            ou_levy(gamma, signal, JumpPart::new(rate, size, compensate)?, p.declared_c0()?)
        }
        "pearson" => {
            let theta = p.positive("theta")?;
            let c0 = p.positive("c0")?;
            let c1 = p.number("c1")?.unwrap_or(0.0);
            let period = p.period()?;
            let signal = signal_param(&p, "signal", "1", period)?;
            let sigma_text = p.text("sigma").unwrap_or_else(|| "1".into());
            let sigma_fn = expr::parse(&sigma_text, 1, &[])
                .map_err(|err| Error::Validation { name: "sigma".into(), reason: err.to_string() })?;
            pearson(theta, c0, c1, signal, sigma_fn, p.declared_c0()?)
        }
        "gbm" => {
            let mu = p.required("mu")?;
            let sigma = p.positive("sigma")?;
            gbm(mu, sigma, p.period()?, p.declared_c0()?)
        }
        "degenerate2d" => {
            let (scope, values) = p.expression_scope();
            let b1 = expr_param(&p, "b1", Some("-x1"), 2, &scope)?;
            let b2 = expr_param(&p, "b2", Some("x1 - x2"), 2, &scope)?;
            let s = expr_param(&p, "sigma", Some("1"), 2, &scope)?;
            let homogeneous = !b1.uses_time() && !b2.uses_time();
            let drift_exprs = Arc::new(vec![b1, b2]);
            let vals = Arc::new(values);
            let v2 = vals.clone();
            let drift: DriftFn = Arc::new(move |t, x, out| {
                for (o, e) in out.iter_mut().zip(drift_exprs.iter()) {
                    *o = e.eval(&Env::new(t, x, &vals))?;
                }
                Ok(())
            });
            let diffusion: DiffusionFn = Arc::new(move |x, out| {
                out[0] = s.eval(&Env::new(0.0, x, &v2))?;
                out[1] = 0.0;
                Ok(())
            });
            ModelBuilder::new("degenerate2d", 2, 1, p.period()?, drift, diffusion)
                .kind(ModelKind::Degenerate2d)
                .declared_c0(p.declared_c0()?)
                .time_homogeneous(homogeneous)
                .build()
        }
        "custom" => custom(&p),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// `dX = (S(t) - gamma X) dt + sigma dW`.
pub fn ou_gauss(gamma: f64, sigma: f64, signal: Signal, declared_c0: Option<f64>) -> Result<PeriodicSDEModel> {
    check_positive("gamma", gamma)?;
    check_positive("sigma", sigma)?;
    let period = signal.period();
    let homogeneous = matches!(signal.shape(), SignalShape::Constant(_));
    let s = signal.clone();
    let drift: DriftFn = Arc::new(move |t, x, out| {
        out[0] = s.value(t) - gamma * x[0];
        Ok(())
    });
    let diffusion: DiffusionFn = Arc::new(move |_x, out| {
        out[0] = sigma;
        Ok(())
    });
    ModelBuilder::new("ou-gauss", 1, 1, period, drift, diffusion)
        .kind(ModelKind::OuGauss { gamma, sigma, signal: signal.clone() })
        .declared_c0(declared_c0)
        .time_homogeneous(homogeneous)
        .signal_split(linear_split(vec![signal], gamma))
        .build()
}

/// `dX = (S(t) - gamma X) dt + dZ` with compound Poisson `Z`.
pub fn ou_levy(gamma: f64, signal: Signal, jumps: JumpPart, declared_c0: Option<f64>) -> Result<PeriodicSDEModel> {
    check_positive("gamma", gamma)?;
    let period = signal.period();
    let homogeneous = matches!(signal.shape(), SignalShape::Constant(_));
    let s = signal.clone();
    let comp = jumps.compensator_rate();
    let drift: DriftFn = Arc::new(move |t, x, out| {
        out[0] = s.value(t) - gamma * x[0] - comp;
        Ok(())
    });
    let diffusion: DiffusionFn = Arc::new(|_x, out| {
        out[0] = 0.0;
        Ok(())
    });
    ModelBuilder::new("ou-levy", 1, 1, period, drift, diffusion)
        .kind(ModelKind::OuLevy { gamma, signal: signal.clone() })
        .jumps(jumps)
        .declared_c0(declared_c0)
        .time_homogeneous(homogeneous)
        .signal_split(linear_split(vec![signal], gamma))
        .build()
}

/// `dX = theta (S(t) - X) dt + sigma_fn(X) sqrt(c0 + (X - c1)^2) dW`.
pub fn pearson(theta: f64, c0: f64, c1: f64, signal: Signal, sigma_fn: Expr, declared_c0: Option<f64>) -> Result<PeriodicSDEModel> {
    check_positive("theta", theta)?;
    check_positive("c0", c0)?;
    if sigma_fn.dim() != 1 || !sigma_fn.params().is_empty() {
        return Err(Error::Validation { name: "sigma".into(), reason: "must be an expression in x1 only".into() });
    }
    let period = signal.period();
    let homogeneous = matches!(signal.shape(), SignalShape::Constant(_));
    let s = signal.clone();
    let drift: DriftFn = Arc::new(move |t, x, out| {
        out[0] = theta * (s.value(t) - x[0]);
        Ok(())
    });
    let diffusion: DiffusionFn = Arc::new(move |x, out| {
        let scale = sigma_fn.eval(&Env::new(0.0, x, &[]))?;
        out[0] = scale * (c0 + (x[0] - c1) * (x[0] - c1)).sqrt();
        Ok(())
    });
    let scaled = scale_signal(&signal, theta)?;
    ModelBuilder::new("pearson", 1, 1, period, drift, diffusion)
        .kind(ModelKind::Pearson { theta, c0, c1, signal })
        .declared_c0(declared_c0)
        .time_homogeneous(homogeneous)
        .signal_split(linear_split(vec![scaled], theta))
        .build()
}

/// Geometric Brownian motion `dX = mu X dt + sigma X dW`.
pub fn gbm(mu: f64, sigma: f64, period: f64, declared_c0: Option<f64>) -> Result<PeriodicSDEModel> {
    if !mu.is_finite() {
        return Err(Error::Validation { name: "mu".into(), reason: "must be finite".into() });
    }
    check_positive("sigma", sigma)?;
    let drift: DriftFn = Arc::new(move |_t, x, out| {
        out[0] = mu * x[0];
        Ok(())
    });
    let diffusion: DiffusionFn = Arc::new(move |x, out| {
        out[0] = sigma * x[0];
        Ok(())
    });
    ModelBuilder::new("gbm", 1, 1, period, drift, diffusion)
        .kind(ModelKind::Gbm { mu, sigma })
        .declared_c0(declared_c0)
        .time_homogeneous(true)
        .build()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation { name: name.into(), reason: format!("must be > 0, got {v}") })
    }
}

fn scale_signal(signal: &Signal, k: f64) -> Result<Signal> {
    let period = signal.period();
    let shape = match signal.shape() {
        SignalShape::Constant(c) => SignalShape::Constant(k * c),
        SignalShape::Sinusoid { amplitude, phase, offset } => SignalShape::Sinusoid { amplitude: k * amplitude, phase: *phase, offset: k * offset },
        SignalShape::PiecewiseConstant { starts, values } => {
            SignalShape::PiecewiseConstant { starts: starts.clone(), values: values.iter().map(|v| k * v).collect() }
        }
        SignalShape::Expr { expr: e, params } => {
            let mut names: Vec<&str> = e.params().iter().map(String::as_str).collect();
            names.push("__scale");
            let node = expr::Node::Bin(
                expr::BinOp::Mul,
                Box::new(expr::Node::Var(expr::Var::Param(names.len() - 1))),
                Box::new(e.root().clone()),
            );
            let mut vals = params.clone();
            vals.push(k);
            SignalShape::Expr { expr: Expr::from_node(node, 0, &names), params: vals }
        }
    };
    Signal::new(shape, period)
}

fn linear_split(signals: Vec<Signal>, rate: f64) -> SignalSplit {
    SignalSplit {
        signals,
        residual: Arc::new(move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -rate * xi;
            }
            Ok(())
        }),
    }
}

fn custom(p: &Params<'_>) -> Result<PeriodicSDEModel> {
    let d = p.required("d")? as usize;
    let m = p.number("m")?.map(|v| v as usize).unwrap_or(d);
    if d == 0 || m == 0 {
        return Err(Error::Validation { name: "d".into(), reason: "dimensions must be >= 1".into() });
    }
    let period = p.period()?;
    let (scope, values) = p.expression_scope();
    let values = Arc::new(values);

    let (drift, split, homogeneous): (DriftFn, Option<SignalSplit>, bool) = if p.text("bhat1").is_some() {
        // b(t, x) = signal_i(t) + bhat_i(x)
        let mut bhat = Vec::with_capacity(d);
        let mut signals = Vec::with_capacity(d);
        for i in 1..=d {
            bhat.push(expr_param(p, &format!("bhat{i}"), None, d, &scope)?);
            signals.push(signal_param(p, &format!("signal{i}"), "0", period)?);
        }
        if bhat.iter().any(Expr::uses_time) {
            return Err(Error::Validation { name: "bhat".into(), reason: "b_hat must not depend on t".into() });
        }
        let homogeneous = signals.iter().all(|s| matches!(s.shape(), SignalShape::Constant(_)));
        let bhat = Arc::new(bhat);
        let sig = Arc::new(signals.clone());
        let (bh, vals) = (bhat.clone(), values.clone());
        let drift: DriftFn = Arc::new(move |t, x, out| {
            for i in 0..out.len() {
                out[i] = sig[i].value(t) + bh[i].eval(&Env::new(t, x, &vals))?;
            }
            Ok(())
        });
        let vals = values.clone();
        let residual: FieldFn = Arc::new(move |x, out| {
            for i in 0..out.len() {
                out[i] = bhat[i].eval(&Env::new(0.0, x, &vals))?;
            }
            Ok(())
        });
        (drift, Some(SignalSplit { signals, residual }), homogeneous)
    } else {
        let mut exprs = Vec::with_capacity(d);
        for i in 1..=d {
            exprs.push(expr_param(p, &format!("b{i}"), None, d, &scope)?);
        }
        let homogeneous = !exprs.iter().any(Expr::uses_time);
        let exprs = Arc::new(exprs);
        let vals = values.clone();
        let drift: DriftFn = Arc::new(move |t, x, out| {
            for (o, e) in out.iter_mut().zip(exprs.iter()) {
                *o = e.eval(&Env::new(t, x, &vals))?;
            }
            Ok(())
        });
        (drift, None, homogeneous)
    };

    let mut sigma_exprs = Vec::with_capacity(d * m);
    for i in 1..=d {
        for j in 1..=m {
            let key = format!("s{i}_{j}");
            let e = expr_param(p, &key, if i == j { None } else { Some("0") }, d, &scope)?;
            if e.uses_time() {
                return Err(Error::Validation { name: key, reason: "diffusion must not depend on t".into() });
            }
            sigma_exprs.push(e);
        }
    }
    let diffusion: DiffusionFn = Arc::new(move |x, out| {
        for (o, e) in out.iter_mut().zip(sigma_exprs.iter()) {
            *o = e.eval(&Env::new(0.0, x, &values))?;
        }
        Ok(())
    });
    let mut b = ModelBuilder::new("custom", d, m, period, drift, diffusion)
        .declared_c0(p.declared_c0()?)
        .time_homogeneous(homogeneous);
    if let Some(split) = split {
        b = b.signal_split(split);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn params(entries: &[(&str, Param)]) -> ParamMap {
        entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn num(v: f64) -> Param {
        Param::Number(v)
    }

    fn text(s: &str) -> Param {
        Param::Text(s.into())
    }

    #[test]
    fn ou_drift_examples() {
        let m = catalog_model("ou-gauss", &params(&[("gamma", num(1.0)), ("sigma", num(1.0))])).unwrap();
        assert_eq!(m.eval_drift(0.3, &[2.0]).unwrap(), vec![-2.0]);
        assert_eq!(m.eval_drift(0.7, &[0.0]).unwrap(), vec![0.0]);
        let m = catalog_model(
            "ou-gauss",
            &params(&[("gamma", num(1.0)), ("sigma", num(1.0)), ("signal", text("sin(2*pi*t)"))]),
        )
        .unwrap();
        assert!((m.eval_drift(0.25, &[0.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(m.eval_drift(0.25, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn diffusion_examples() {
        let m = catalog_model("ou-gauss", &params(&[("gamma", num(1.0)), ("sigma", num(1.0))])).unwrap();
        let e = m.eval_diffusion(&[3.0]).unwrap();
        assert_eq!((e.a[0], e.lambda_min, e.lambda_max), (1.0, 1.0, 1.0));

        let m = catalog_model("pearson", &params(&[("theta", num(1.0)), ("c0", num(1.0)), ("c1", num(0.0))])).unwrap();
        assert_eq!(m.eval_diffusion(&[0.0]).unwrap().a[0], 1.0);
        assert!((m.eval_diffusion(&[2.0]).unwrap().a[0] - 5.0).abs() < 1e-14);

        let m = catalog_model("degenerate2d", &ParamMap::new()).unwrap();
        for x in [[0.0, 0.0], [1.5, -2.0], [-7.0, 3.0]] {
            let e = m.eval_diffusion(&x).unwrap();
            assert_eq!(e.lambda_min, 0.0);
            assert_eq!(e.lambda_max, 1.0);
        }
    }

    #[test]
    fn gbm_and_catalog_errors() {
        let m = catalog_model("gbm", &params(&[("mu", num(-1.0)), ("sigma", num(1.0))])).unwrap();
        assert_eq!(m.eval_drift(0.1, &[3.0]).unwrap(), vec![-3.0]);
        assert_eq!(m.eval_diffusion(&[3.0]).unwrap().sigma, vec![3.0]);
        assert!(m.is_time_homogeneous());

        assert!(matches!(catalog_model("nope", &ParamMap::new()), Err(Error::UnknownModel(_))));
        assert!(matches!(
            catalog_model("ou-gauss", &params(&[("gamma", num(0.0)), ("sigma", num(1.0))])),
            Err(Error::Validation { ref name, .. }) if name == "gamma"
        ));
        assert!(matches!(
            catalog_model("pearson", &params(&[("theta", num(1.0)), ("c0", num(-1.0))])),
            Err(Error::Validation { ref name, .. }) if name == "c0"
        ));
        assert!(matches!(
            catalog_model("ou-gauss", &params(&[("sigma", num(1.0))])),
            Err(Error::Validation { ref name, .. }) if name == "gamma"
        ));
        assert!(catalog_model("ou-gauss", &params(&[("gamma", num(1.0)), ("sigma", num(1.0)), ("signal", text("sin(t"))])).is_err());
    }

    #[test]
    fn custom_model_from_expressions() {
        let m = catalog_model(
            "custom",
            &params(&[
                ("d", num(2.0)),
                ("m", num(1.0)),
                ("k", num(3.0)),
                ("b1", text("-k*x1 + sin(2*pi*t)")),
                ("b2", text("x1 - x2")),
                ("s1_1", text("1")),
                ("s2_1", text("0.5")),
            ]),
        )
        .unwrap();
        assert!(!m.is_time_homogeneous());
        assert!(!m.noise_covers_state());
        let b = m.eval_drift(1.25, &[1.0, 2.0]).unwrap();
        assert!((b[0] - (-3.0 + 1.0)).abs() < 1e-14);
        assert_eq!(b[1], -1.0);
        let e = m.eval_diffusion(&[0.0, 0.0]).unwrap();
        assert_eq!(e.a, vec![1.0, 0.5, 0.5, 0.25]);
        assert!(e.lambda_min.abs() < 1e-15);
        assert!((e.lambda_max - 1.25).abs() < 1e-15);
    }

    #[test]
    fn custom_split_form() {
        let m = catalog_model(
            "custom",
            &params(&[("d", num(1.0)), ("bhat1", text("-2*x1")), ("signal1", text("sin(2*pi*t/T)")), ("s1_1", text("1"))]),
        )
        .unwrap();
        let split = m.signal_split().unwrap();
        let mut out = [0.0];
        (split.residual)(&[1.5], &mut out).unwrap();
        assert_eq!(out[0], -3.0);
        assert!((m.eval_drift(0.25, &[0.0]).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn general_eigen_path() {
        let a = [2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.5];
        let (lo, hi) = extreme_eigenvalues(&a, 3);
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jump_laws() {
        assert_eq!(JumpSize::parse("const:1").unwrap(), JumpSize::Constant(1.0));
        assert!(JumpSize::parse("normal:0").is_err());
        assert!(JumpSize::parse("exp:-1").is_err());
        let n = JumpSize::Normal { mean: 0.0, sd: 1.0 };
        assert!(n.small_jump_mean().abs() < 1e-12);
        // E[min(J^2, 1)] for J ~ N(0,1): 1 - 2 phi(1) - ... check against a direct sum
        let direct: f64 = {
            let steps = 200_000;
            let (lo, hi) = (-12.0, 12.0);
            let dx = (hi - lo) / steps as f64;
            (0..steps)
                .map(|i| {
                    let x = lo + (i as f64 + 0.5) * dx;
                    (x * x).min(1.0) * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * dx
                })
                .sum()
        };
        assert!((n.truncated_second_moment(1.0) - direct).abs() < 1e-8);
        let j = JumpPart::new(2.0, JumpSize::Constant(0.5), true).unwrap();
        assert_eq!(j.compensator_rate(), 1.0);
        assert_eq!(j.mean_rate(), 0.0);
    }

    proptest! {
        #[test]
        fn drift_is_periodic_on_exact_shifts(n in 0u32..(1 << 22), x in -50.0f64..50.0, k in prop::sample::select(vec![1u32, 2, 17])) {
            let m = catalog_model(
                "ou-gauss",
                &params(&[("gamma", num(0.7)), ("sigma", num(1.0)), ("signal", text("sin(2*pi*t/T) + 0.3*cos(4*pi*t/T)")), ("T", num(0.5))]),
            ).unwrap();
            let t = n as f64 / (1u64 << 20) as f64;
            let a = m.eval_drift(t, &[x]).unwrap();
            let b = m.eval_drift(t + k as f64 * 0.5, &[x]).unwrap();
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
        }

        #[test]
        fn drift_is_periodic_on_arbitrary_times(t in 0.0f64..100.0, x in -50.0f64..50.0, k in 1u32..20) {
            let m = catalog_model("pearson", &params(&[("theta", num(1.0)), ("c0", num(1.0)), ("signal", text("1 + 0.5*sin(2*pi*t)"))])).unwrap();
            let a = m.eval_drift(t, &[x]).unwrap()[0];
            let b = m.eval_drift(t + k as f64, &[x]).unwrap()[0];
            prop_assert!((a - b).abs() <= 1e-11);
        }

        #[test]
        fn diffusion_matrix_properties(x1 in -20.0f64..20.0, x2 in -20.0f64..20.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = catalog_model(
                "custom",
                &params(&[("d", num(2.0)), ("m", num(2.0)), ("b1", text("-x1")), ("b2", text("-x2")),
                    ("s1_1", text("1 + x1^2")), ("s1_2", Param::Number(a)), ("s2_1", Param::Number(b)), ("s2_2", text("sin(x2)"))]),
            ).unwrap();
            let e = m.eval_diffusion(&[x1, x2]).unwrap();
            prop_assert_eq!(e.a[1], e.a[2]);
            prop_assert!(e.lambda_min >= 0.0);
            prop_assert!(e.lambda_min <= e.lambda_max);
        }
    }
}
