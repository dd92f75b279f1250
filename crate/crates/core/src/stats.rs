//! Statistical checks: Kolmogorov–Smirnov goodness of fit, distributional
//! periodicity, Monte Carlo Lyapunov drift, escape probabilities, Bernstein
//! tails and an exploratory kernel density estimate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exec::{derive_seed, map_indexed, pairwise_sum, path_rng, Execution, PathRng};
use crate::model::{Dynamics, PeriodicSDEModel};
use crate::simulate::{PathSimulator, Scheme, SimulationPlan};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;
const MIN_N: usize = 10;
const EXPLOSION_TOLERANCE: f64 = 0.01;

/// Significance level of a KS test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Level {
    #[serde(rename = "0.05")]
    P05,
    #[serde(rename = "0.01")]
    P01,
}

impl Level {
    /// Asymptotic Kolmogorov critical value.
    pub fn critical(self) -> f64 {
        match self {
            Level::P05 => 1.358,
            Level::P01 => 1.628,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Level::P05 => 0.05,
            Level::P01 => 0.01,
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Level> {
        match s.trim() {
            "0.05" => Ok(Level::P05),
            "0.01" => Ok(Level::P01),
            other => invalid(format!("level must be 0.05 or 0.01, got `{other}`")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    /// `statistic <= threshold`
    pub pass: bool,
    /// set when more than 1% of the paths exploded; the verdict is then void
    pub inconclusive: bool,
    pub description: String,
    pub details: BTreeMap<String, f64>,
}

impl TestResult {
    fn new(statistic: f64, threshold: f64, n: usize, description: String) -> TestResult {
        TestResult { statistic, threshold, n, pass: statistic <= threshold, inconclusive: false, description, details: BTreeMap::new() }
    }

    fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    /// Passed and not voided by explosions.
    pub fn accepted(&self) -> bool {
        self.pass && !self.inconclusive
    }
}

fn check_samples(samples: &[f64], what: &str) -> Result<()> {
    if samples.len() < MIN_N {
        return invalid(format!("{what} needs at least {MIN_N} samples, got {}", samples.len()));
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return invalid(format!("{what}: non-finite sample {v}"));
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `D_n = sup |F_n - F|` against `c(level) / sqrt(n)`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, level: Level) -> Result<TestResult> {
    check_samples(samples, "ks_one_sample")?;
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        if !(0.0..=1.0).contains(&f) {
            return invalid(format!("cdf returned {f} at {x}"));
        }
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(TestResult::new(d, level.critical() / n.sqrt(), xs.len(), format!("one-sample KS at level {level}")))
}

/// Two-sample KS statistic against `c(level) sqrt((n_a + n_b) / (n_a n_b))`.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: Level) -> Result<TestResult> {
    check_samples(a, "ks_two_sample")?;
    check_samples(b, "ks_two_sample")?;
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let threshold = level.critical() * ((na + nb) / (na * nb)).sqrt();
    Ok(TestResult::new(d, threshold, xa.len().min(xb.len()), format!("two-sample KS at level {level}")))
}

/// Where transition samples come from.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    /// a catalog model with the given scheme
    Model(&'a PeriodicSDEModel, Scheme),
    /// Euler–Maruyama on arbitrary coefficients
    Dynamics(&'a dyn Dynamics),
    /// any transition sampler, e.g. a hand-written scheme
    Sampler(&'a TransitionSampler<'a>),
}

/// `sample(t0, x, horizon, n, seed)` returns `n` endpoints, `None` for exploded paths.
pub type TransitionFn<'a> = dyn Fn(f64, &[f64], f64, usize, u64) -> Result<Vec<Option<Vec<f64>>>> + Sync + 'a;

pub struct TransitionSampler<'a> {
    pub dim: usize,
    pub period: f64,
    pub exact: bool,
    pub sample: Box<TransitionFn<'a>>,
}

impl Source<'_> {
    fn period(&self) -> f64 {
        match self {
            Source::Model(m, _) => m.period(),
            Source::Dynamics(d) => d.period(),
            Source::Sampler(s) => s.period,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Source::Model(m, _) => m.dim(),
            Source::Dynamics(d) => d.dim(),
            Source::Sampler(s) => s.dim,
        }
    }

    /// No time-discretisation bias.
    pub fn is_exact(&self) -> bool {
        match self {
            Source::Model(_, scheme) => matches!(scheme, Scheme::ExactOu | Scheme::LevyOu),
            Source::Dynamics(_) => false,
            Source::Sampler(s) => s.exact,
        }
    }
}

/// Monte Carlo settings shared by the simulation-based checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub step: f64,
    pub execution: Execution,
}

impl McOptions {
    pub fn new(step: f64) -> McOptions {
        McOptions { step, execution: Execution::Parallel }
    }
}

/// Endpoints after time `horizon` from `(t0, x)`; exploded paths are `None`.
pub fn transition_samples(
    source: Source<'_>,
    opts: &McOptions,
    t0: f64,
    x: &[f64],
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Option<Vec<f64>>>> {
    if x.len() != source.dim() {
        return invalid(format!("start point has length {}, model dimension {}", x.len(), source.dim()));
    }
    if !(horizon > 0.0) {
        return invalid(format!("horizon must be positive, got {horizon}"));
    }
    if let Source::Sampler(s) = source {
        let out = (s.sample)(t0, x, horizon, n, seed)?;
        if out.len() != n {
            return invalid(format!("sampler returned {} endpoints, expected {n}", out.len()));
        }
        return Ok(out);
    }
    let steps = (horizon / opts.step).round();
    if steps < 1.0 || (steps * opts.step - horizon).abs() > 1e-9 * horizon {
        return invalid(format!("horizon {horizon} is not a multiple of the step {}", opts.step));
    }
    let mut plan = SimulationPlan::new(opts.step, 0, n, seed, x.to_vec())
        .start_time(t0)
        .horizon_steps(steps as usize)
        .execution(opts.execution);
    let sim = match source {
        Source::Model(m, scheme) => {
            plan = plan.scheme(scheme);
            PathSimulator::for_model(m, &plan)?
        }
        Source::Dynamics(d) => PathSimulator::euler(d, &plan)?,
        Source::Sampler(_) => unreachable!("handled above"),
    };
    Ok(sim.final_states())
}

/// Splits off exploded paths; returns `(survivors, explosions, inconclusive)`.
fn survivors(states: Vec<Option<Vec<f64>>>) -> (Vec<Vec<f64>>, usize, bool) {
    let total = states.len();
    let ok: Vec<Vec<f64>> = states.into_iter().flatten().collect();
    let lost = total - ok.len();
    (ok, lost, lost as f64 > EXPLOSION_TOLERANCE * total as f64)
}

/// Compares the laws of `xi_{s+Delta}` started at `(s, x)` and at `(s+T, x)`,
/// coordinate by coordinate; the statistic is the largest KS distance.
/// Laws with atoms (jump models over short windows) need a start time whose
/// wrap is exact in floating point, such as a dyadic `s`; otherwise the two
/// atoms land one ulp apart and the KS distance picks up their mass.
#[allow(clippy::too_many_arguments)]
pub fn periodicity_check(
    source: Source<'_>,
    s: f64,
    x: &[f64],
    delta: f64,
    n: usize,
    seed: u64,
    level: Level,
    opts: &McOptions,
) -> Result<TestResult> {
    let period = source.period();
    let a = transition_samples(source, opts, s, x, delta, n, derive_seed(seed, 1))?;
    let b = transition_samples(source, opts, s + period, x, delta, n, derive_seed(seed, 2))?;
    let (a, lost_a, bad_a) = survivors(a);
    let (b, lost_b, bad_b) = survivors(b);
    let mut worst: Option<TestResult> = None;
    for k in 0..x.len() {
        let ca: Vec<f64> = a.iter().map(|v| v[k]).collect();
        let cb: Vec<f64> = b.iter().map(|v| v[k]).collect();
        let r = ks_two_sample(&ca, &cb, level)?;
        if worst.as_ref().is_none_or(|w| r.statistic - r.threshold > w.statistic - w.threshold) {
            worst = Some(r.detail("coordinate", k as f64));
        }
    }
    let mut r = worst.expect("dimension is at least one");
    r.inconclusive = bad_a || bad_b;
    r.description = format!("periodicity: law at s={s} vs s+T over {delta}, KS level {level}");
    Ok(r.detail("explosions", (lost_a + lost_b) as f64))
}

/// Norm-like test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lyapunov {
    SquaredNorm,
    Norm,
}

impl Lyapunov {
    pub fn eval(self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        match self {
            Lyapunov::SquaredNorm => sq,
            Lyapunov::Norm => sq.sqrt(),
        }
    }
}

impl FromStr for Lyapunov {
    type Err = Error;

    fn from_str(s: &str) -> Result<Lyapunov> {
        match s.trim() {
            "|x|^2" | "sq" | "squared-norm" => Ok(Lyapunov::SquaredNorm),
            "|x|" | "norm" => Ok(Lyapunov::Norm),
            other => invalid(format!("unknown test function `{other}`")),
        }
    }
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z99 * (var / n).sqrt())
}

/// Estimates `P_{t0,t0+T} V(x) - V(x)` with a 99% interval; passes when the
/// upper end is at most `-eps T + slack`. `slack` absorbs the scheme bias and
/// should be zero for exact samplers.
#[allow(clippy::too_many_arguments)]
pub fn drift_check(
    source: Source<'_>,
    v: Lyapunov,
    x: &[f64],
    eps: f64,
    n: usize,
    seed: u64,
    slack: f64,
    opts: &McOptions,
) -> Result<TestResult> {
    if n < MIN_N {
        return invalid(format!("drift_check needs at least {MIN_N} paths"));
    }
    if !(slack >= 0.0) || (source.is_exact() && slack != 0.0) {
        return invalid("slack must be >= 0, and zero for exact samplers");
    }
    let period = source.period();
    let (ends, lost, bad) = survivors(transition_samples(source, opts, 0.0, x, period, n, seed)?);
    if ends.len() < 2 {
        let mut r = TestResult::new(f64::NAN, -eps * period + slack, ends.len(), "drift: too few surviving paths".into());
        r.inconclusive = true;
        return Ok(r.detail("explosions", lost as f64));
    }
    let v0 = v.eval(x);
    let diffs: Vec<f64> = ends.iter().map(|y| v.eval(y) - v0).collect();
    let (mean, half) = mean_ci(&diffs);
    let mut r = TestResult::new(mean + half, -eps * period + slack, ends.len(), format!("drift of {v:?} over one period"))
        .detail("estimate", mean)
        .detail("ci_low", mean - half)
        .detail("ci_high", mean + half)
        .detail("explosions", lost as f64);
    r.inconclusive = bad;
    Ok(r)
}

/// Wilson score interval at 99% for `k` successes in `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = Z99 * Z99;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z99 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `P_x(|xi_s| <= r_tilde)` for each `s` in the grid; passes when every 99%
/// upper bound is at most `bound`.
#[allow(clippy::too_many_arguments)]
pub fn escape_probability_check(
    source: Source<'_>,
    x: &[f64],
    r_tilde: f64,
    s_grid: &[f64],
    n: usize,
    seed: u64,
    bound: f64,
    opts: &McOptions,
) -> Result<TestResult> {
    let norm = Lyapunov::Norm.eval(x);
    if !(norm > r_tilde) {
        return invalid(format!("start |x| = {norm} must lie outside the ball of radius {r_tilde}"));
    }
    let period = source.period();
    if s_grid.is_empty() || s_grid.iter().any(|&s| !(s > 0.0 && s <= period)) {
        return invalid("s-grid must be a non-empty subset of (0, T]");
    }
    if n < MIN_N {
        return invalid(format!("escape_probability_check needs at least {MIN_N} paths"));
    }
    let mut worst = 0.0f64;
    let mut lost_total = 0;
    let mut inconclusive = false;
    let mut r = TestResult::new(0.0, bound, n, format!("return probability into radius {r_tilde}"));
    for (k, &s) in s_grid.iter().enumerate() {
        let (ends, lost, bad) = survivors(transition_samples(source, opts, 0.0, x, s, n, derive_seed(seed, k as u64))?);
        lost_total += lost;
        inconclusive |= bad;
        let hits = ends.iter().filter(|y| Lyapunov::Norm.eval(y) <= r_tilde).count();
        let (_, hi) = wilson_interval(hits, ends.len());
        r.details.insert(format!("p[{s}]"), hits as f64 / ends.len() as f64);
        worst = worst.max(hi);
    }
    r.statistic = worst;
    r.pass = worst <= bound;
    r.inconclusive = inconclusive;
    Ok(r.detail("explosions", lost_total as f64))
}

/// Draws `sup_{s<=T} |M_s|` for one path from its own random stream.
pub type SupSampler<'a> = dyn Fn(&mut PathRng) -> f64 + Sync + 'a;

/// Grid running max of `|scale W|` on `[0, horizon]` with step `h`.
pub fn brownian_sup(scale: f64, horizon: f64, h: f64) -> impl Fn(&mut PathRng) -> f64 + Sync {
    let steps = (horizon / h).round().max(1.0) as usize;
    let sd = scale * (horizon / steps as f64).sqrt();
    move |rng: &mut PathRng| {
        let (mut w, mut sup) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(rng);
            w += sd * z;
            sup = sup.max(w.abs());
        }
        sup
    }
}

/// Empirical `P(sup |M| >= x)` against `2 exp(-x^2 / (2B))`, one result per
/// level `x`. The statistic is the 99% lower confidence bound. The running
/// max is taken on the simulation grid, which can only understate the true
/// supremum.
pub fn bernstein_tail_check(
    sampler: &SupSampler<'_>,
    bracket: f64,
    xs: &[f64],
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<TestResult>> {
    if !(bracket > 0.0) {
        return invalid(format!("bracket bound must be positive, got {bracket}"));
    }
    if n < MIN_N {
        return invalid(format!("bernstein_tail_check needs at least {MIN_N} paths"));
    }
    let sups = map_indexed(n, execution, |i| sampler(&mut path_rng(seed, i as u64)));
    let finite: Vec<f64> = sups.into_iter().filter(|v| v.is_finite()).collect();
    let lost = n - finite.len();
    Ok(xs
        .iter()
        .map(|&x| {
            let hits = finite.iter().filter(|&&s| s >= x).count();
            let (lo, hi) = wilson_interval(hits, finite.len());
            let bound = 2.0 * (-x * x / (2.0 * bracket)).exp();
            let mut r = TestResult::new(lo, bound, finite.len(), format!("Bernstein tail at x={x}, bracket {bracket}"))
                .detail("x", x)
                .detail("empirical", hits as f64 / finite.len() as f64)
                .detail("ci_high", hi)
                .detail("explosions", lost as f64);
            r.inconclusive = lost as f64 > EXPLOSION_TOLERANCE * n as f64;
            r
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Silverman,
}

/// `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mean = pairwise_sum(&xs) / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let (i, frac) = (pos.floor() as usize, pos.fract());
        xs[i] + frac * (xs[(i + 1).min(xs.len() - 1)] - xs[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate at `points`. Exploratory only.
pub fn kde_density(samples: &[f64], bandwidth: Bandwidth, points: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 30 {
        return invalid(format!("kde needs at least 30 samples, got {}", samples.len()));
    }
    check_samples(samples, "kde_density")?;
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Silverman => silverman_bandwidth(samples),
    };
    if !(h > 0.0 && h.is_finite()) {
        return invalid(format!("bandwidth must be positive, got {h}"));
    }
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(map_indexed(points.len(), Execution::Parallel, |k| {
        let p = points[k];
        samples.iter().map(|s| (-0.5 * ((p - s) / h).powi(2)).exp()).sum::<f64>() * norm
    }))
}
