//! Additive functionals `A_t = int_0^t F(s, xi_s) Lambda_T(ds)` with a
//! T-periodic measure made of a density and finitely many atoms, their time
//! averages, and the analytic long-run limit.

use crate::closedform::GaussianLaw;
use crate::error::{invalid, Result};
use crate::exec::{map_indexed, pairwise_sum, Execution};
use crate::expr::{self, Env, Expr};
use crate::quadrature::{integrate, QuadOptions};
use crate::simulate::{PathSimulator, TrajectoryBundle};
use crate::time::wrap_unchecked;

const ALIGN_TOL: f64 = 1e-12;
const INNER_TOL: f64 = 1e-10;
const OUTER_TOL: f64 = 1e-8;
const Z_RANGE: f64 = 12.0;

/// Density part of `Lambda_T` on `[0, T)`, extended periodically.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Zero,
    Constant(f64),
    /// expression in `t`, evaluated at `t mod T`
    Expr(Expr),
}

/// `F(s, x)` together with the periodic measure `Lambda_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicFunctional {
    integrand: Expr,
    density: Density,
    atoms: Vec<(f64, f64)>,
    period: f64,
    /// values bound to the expression parameters (`T`)
    params: Vec<f64>,
}

impl PeriodicFunctional {
    /// `integrand` may use `t`, `x1..xd` and `T`; `density` uses `t` and `T`.
    /// Atoms are `(location in [0, T), weight > 0)`.
    pub fn new(integrand: Expr, density: Density, atoms: Vec<(f64, f64)>, period: f64) -> Result<PeriodicFunctional> {
        if !(period > 0.0 && period.is_finite()) {
            return invalid(format!("period must be positive, got {period}"));
        }
        let params_ok = |e: &Expr| e.params().is_empty() || e.params() == ["T"];
        if !params_ok(&integrand) {
            return invalid("the integrand may only use the parameter T");
        }
        match &density {
            Density::Constant(c) if !(*c >= 0.0 && c.is_finite()) => return invalid(format!("density must be >= 0, got {c}")),
            Density::Expr(e) if e.dim() != 0 || !params_ok(e) => return invalid("the density may only use t and T"),
            _ => {}
        }
        for &(s, w) in &atoms {
            if !(0.0..period).contains(&s) || !(w > 0.0 && w.is_finite()) {
                return invalid(format!("atom ({s}, {w}) needs location in [0, T) and positive weight"));
            }
        }
        Ok(PeriodicFunctional { integrand, density, atoms, period, params: vec![period] })
    }

    /// Parses `F` (state dimension `dim`) and an optional density expression.
    pub fn parse(integrand: &str, dim: usize, density: Option<&str>, atoms: Vec<(f64, f64)>, period: f64) -> Result<PeriodicFunctional> {
        let f = expr::parse(integrand, dim, &["T"])?;
        let density = match density {
            None => Density::Zero,
            Some(text) => {
                let e = expr::parse(text, 0, &["T"])?;
                if e.uses_time() {
                    Density::Expr(e)
                } else {
                    Density::Constant(e.eval(&Env::new(0.0, &[], &[period]))?)
                }
            }
        };
        PeriodicFunctional::new(f, density, atoms, period)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dim(&self) -> usize {
        self.integrand.dim()
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    fn params(&self) -> &[f64] {
        if self.integrand.params().is_empty() {
            &[]
        } else {
            &self.params
        }
    }

    /// `F(i_T(s), x)`.
    pub fn eval(&self, s: f64, x: &[f64]) -> Result<f64> {
        Ok(self.integrand.eval(&Env::new(wrap_unchecked(s, self.period), x, self.params()))?)
    }

    /// `g(i_T(s))`.
    pub fn density(&self, s: f64) -> Result<f64> {
        match &self.density {
            Density::Zero => Ok(0.0),
            Density::Constant(c) => Ok(*c),
            Density::Expr(e) => {
                let params: &[f64] = if e.params().is_empty() { &[] } else { &self.params };
                let v = e.eval(&Env::new(wrap_unchecked(s, self.period), &[], params))?;
                if v < 0.0 {
                    return invalid(format!("density is negative ({v}) at s={s}"));
                }
                Ok(v)
            }
        }
    }

    fn has_density(&self) -> bool {
        !matches!(self.density, Density::Zero | Density::Constant(0.0))
    }
}

/// Running state of `A` along one path on a grid of spacing `h` with `n_per`
/// points per period.
struct Accumulator<'a> {
    f: &'a PeriodicFunctional,
    h: f64,
    phase0: f64,
    n_per: usize,
    /// weight of the atoms sitting at each phase index
    atom_at: Vec<f64>,
    density_at: Vec<f64>,
}

impl<'a> Accumulator<'a> {
    fn new(f: &'a PeriodicFunctional, h: f64, start: f64, n_per: usize) -> Result<Accumulator<'a>> {
        let period = f.period;
        if (period - n_per as f64 * h).abs() > ALIGN_TOL * period {
            return invalid(format!("grid spacing {h} does not divide the period {period}"));
        }
        let phase0 = wrap_unchecked(start, period);
        let mut atom_at = vec![0.0; n_per];
        let mut offenders = Vec::new();
        for &(s, w) in &f.atoms {
            let offset = wrap_unchecked(s - phase0, period);
            let k = (offset / h).round();
            if (offset - k * h).abs() > ALIGN_TOL * period && (period - offset).abs() > ALIGN_TOL * period {
                offenders.push(s);
                continue;
            }
            atom_at[(k as usize) % n_per] += w;
        }
        if !offenders.is_empty() {
            return invalid(format!("atoms {offenders:?} do not fall on the time grid"));
        }
        let density_at = (0..n_per).map(|p| f.density(phase0 + p as f64 * h)).collect::<Result<Vec<_>>>()?;
        Ok(Accumulator { f, h, phase0, n_per, atom_at, density_at })
    }

    fn phase(&self, j: usize) -> (usize, f64) {
        let p = j % self.n_per;
        (p, wrap_unchecked(self.phase0 + p as f64 * self.h, self.f.period))
    }

    /// Contribution of grid point `j`: its atom mass now, its density cell to the next point.
    fn terms(&self, j: usize, x: &[f64]) -> Result<(f64, f64)> {
        let (p, s) = self.phase(j);
        let (atom, dens) = (self.atom_at[p], self.density_at[p]);
        if atom == 0.0 && dens == 0.0 {
            return Ok((0.0, 0.0));
        }
        let v = self.f.eval(s, x)?;
        Ok((atom * v, dens * v * self.h))
    }
}

/// `A_{t_j}` for every path of a bundle, at the bundle's recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalTrace {
    pub start_time: f64,
    pub step: f64,
    pub values: Vec<Vec<f64>>,
}

impl FunctionalTrace {
    pub fn time(&self, j: usize) -> f64 {
        self.start_time + j as f64 * self.step
    }
}

/// Left-endpoint Riemann sum for the density plus atom masses at matching
/// grid times; atoms count on the closed interval `[0, t]`.
pub fn accumulate(bundle: &TrajectoryBundle, f: &PeriodicFunctional) -> Result<FunctionalTrace> {
    if f.dim() != bundle.dim {
        return invalid(format!("functional has dimension {}, bundle {}", f.dim(), bundle.dim));
    }
    if (f.period - bundle.period).abs() > ALIGN_TOL * f.period {
        return invalid("functional and bundle periods differ");
    }
    if !bundle.steps_per_period.is_multiple_of(bundle.record_every) && (f.has_density() || !f.atoms.is_empty()) {
        return invalid("recorded grid is not periodic; record a divisor of the steps per period");
    }
    let n_per = (bundle.steps_per_period / bundle.record_every).max(1);
    let acc = Accumulator::new(f, bundle.recorded_step(), bundle.start_time, n_per)?;
    let d = bundle.dim;
    let values = bundle
        .paths
        .iter()
        .map(|p| {
            let n = p.states.len() / d;
            let mut out = Vec::with_capacity(n);
            let mut carry = 0.0;
            for j in 0..n {
                let (atom, cell) = acc.terms(j, &p.states[j * d..(j + 1) * d])?;
                out.push(carry + atom);
                carry += atom + cell;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FunctionalTrace { start_time: bundle.start_time, step: bundle.recorded_step(), values })
}

/// `A` at steps `0, every, 2 every, ..` (and the last step) per path,
/// accumulated at full step resolution while simulating, without storing the
/// path. Exploded paths give `None`.
pub fn accumulate_sampled(sim: &PathSimulator<'_>, f: &PeriodicFunctional, every: usize) -> Result<Vec<Option<Vec<f64>>>> {
    if every == 0 {
        return invalid("sampling stride must be >= 1");
    }
    let plan = sim.plan();
    let acc = Accumulator::new(f, sim.step(), plan.start_time, sim.steps_per_period())?;
    let results = map_indexed(plan.n_paths, plan.execution, |i| {
        let mut carry = 0.0;
        let mut out = Vec::with_capacity(sim.steps() / every + 2);
        let mut err = None;
        let run = sim.run(i, |j, x| {
            if err.is_some() {
                return;
            }
            match acc.terms(j, x) {
                Ok((atom, cell)) => {
                    let a = carry + atom;
                    if j % every == 0 || j == sim.steps() {
                        out.push(a);
                    }
                    carry = a + cell;
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(run.exploded_at.is_none().then_some(out)),
        }
    });
    results.into_iter().collect()
}

/// Final value `A_t` per path; see [`accumulate_sampled`].
pub fn accumulate_streaming(sim: &PathSimulator<'_>, f: &PeriodicFunctional) -> Result<Vec<Option<f64>>> {
    let all = accumulate_sampled(sim, f, sim.steps().max(1))?;
    Ok(all.into_iter().map(|v| v.and_then(|v| v.last().copied())).collect())
}

/// `A_t / t` at the grid time nearest to `t`, with `t` measured from the
/// start of the bundle.
pub fn time_average(trace: &FunctionalTrace, path: usize, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("t must be positive, got {t}"));
    }
    let a = trace.values.get(path).ok_or_else(|| crate::Error::InvalidArgument(format!("no path {path}")))?;
    let j = ((t / trace.step).round() as usize).min(a.len().saturating_sub(1));
    let tj = j as f64 * trace.step;
    if !(tj > 0.0) {
        return invalid("nearest grid time is not positive");
    }
    Ok(a[j] / tj)
}

/// Law of the invariant marginal at phase `s`.
pub enum Marginal<'a> {
    Gaussian(&'a (dyn Fn(f64) -> Result<GaussianLaw> + Sync)),
    /// `sampler(s, n, seed)` draws `n` states from the marginal at phase `s`
    Sampler { sampler: &'a (dyn Fn(f64, usize, u64) -> Result<Vec<Vec<f64>>> + Sync), n: usize, s_points: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ErgodicLimit {
    pub value: f64,
    /// Monte Carlo standard error; zero for the quadrature route
    pub std_error: f64,
}

/// `(1/T) [int_0^T g(s) E_s F(s, .) ds + sum_i w_i E_{s_i} F(s_i, .)]`.
pub fn ergodic_limit(f: &PeriodicFunctional, marginal: Marginal<'_>) -> Result<ErgodicLimit> {
    let period = f.period;
    match marginal {
        Marginal::Gaussian(law_at) => {
            if f.dim() != 1 {
                return invalid("Gaussian marginals are one-dimensional");
            }
            let mut fail = None;
            let expect = |s: f64| -> Result<f64> {
                let law = law_at(s)?;
                let (m, sd) = (law.mean, law.sd());
                let r = integrate(
                    |z| {
                        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                        f.eval(s, &[m + sd * z]).map(|v| v * phi).unwrap_or(f64::NAN)
                    },
                    -Z_RANGE,
                    Z_RANGE,
                    &[],
                    QuadOptions::abs(INNER_TOL),
                )?;
                Ok(r.value)
            };
            let mut total = 0.0;
            if f.has_density() {
                let outer = integrate(
                    |s| match f.density(s).and_then(|g| if g == 0.0 { Ok(0.0) } else { expect(s).map(|e| g * e) }) {
                        Ok(v) => v,
                        Err(e) => {
                            fail.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    0.0,
                    period,
                    &[],
                    QuadOptions::abs(OUTER_TOL),
                );
                if let Some(e) = fail {
                    return Err(e);
                }
                total += outer?.value;
            }
            for &(s, w) in &f.atoms {
                total += w * expect(s)?;
            }
            Ok(ErgodicLimit { value: total / period, std_error: 0.0 })
        }
        Marginal::Sampler { sampler, n, s_points, seed } => {
            if n < 2 || s_points == 0 {
                return invalid("sampler route needs n >= 2 and at least one phase point");
            }
            // (weight, phase) pairs: midpoint cells for the density, then the atoms
            let mut nodes: Vec<(f64, f64)> = Vec::new();
            if f.has_density() {
                let ds = period / s_points as f64;
                for k in 0..s_points {
                    let s = (k as f64 + 0.5) * ds;
                    nodes.push((f.density(s)? * ds, s));
                }
            }
            nodes.extend(f.atoms.iter().map(|&(s, w)| (w, s)));
            let stats = map_indexed(nodes.len(), Execution::Parallel, |k| -> Result<(f64, f64)> {
                let (_, s) = nodes[k];
                let xs = sampler(s, n, crate::exec::derive_seed(seed, k as u64))?;
                let vals = xs.iter().map(|x| f.eval(s, x)).collect::<Result<Vec<f64>>>()?;
                let mean = pairwise_sum(&vals) / n as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                Ok((mean, var))
            });
            let mut value = 0.0;
            let mut var = 0.0;
            for ((w, _), st) in nodes.iter().zip(stats) {
                let (mean, v) = st?;
                value += w * mean;
                var += w * w * v / n as f64;
            }
            Ok(ErgodicLimit { value: value / period, std_error: var.sqrt() / period })
        }
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::closedform::{compute_m, ou_invariant};
    use crate::model::{gbm, ou_gauss};
    use crate::signal::Signal;
    use crate::simulate::{extract_grid_chain, simulate_ou_exact, simulate_paths, SimulationPlan};

    fn lebesgue(text: &str) -> PeriodicFunctional {
        PeriodicFunctional::parse(text, 1, Some("1"), vec![], 1.0).unwrap()
    }

    #[test]
    fn constant_functional_counts_time() {
        let m = ou_gauss(1.0, 1.0, Signal::zero(1.0).unwrap(), None).unwrap();
        let b = simulate_paths(&m, &SimulationPlan::new(0.01, 3, 2, 1, vec![0.0])).unwrap();
        let tr = accumulate(&b, &lebesgue("1")).unwrap();
        for (j, a) in tr.values[0].iter().enumerate() {
            assert!((a - tr.time(j)).abs() < 1e-10);
        }
        assert!((time_average(&tr, 1, 3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(time_average(&tr, 0, 0.0).is_err());
    }

    #[test]
    fn constant_path() {
        // sigma tiny and mu zero: the path stays at c
        let m = gbm(0.0, 1e-300, 1.0, None).unwrap();
        let b = simulate_paths(&m, &SimulationPlan::new(0.125, 4, 1, 1, vec![2.5])).unwrap();
        let tr = accumulate(&b, &lebesgue("x1")).unwrap();
        let last = tr.values[0].len() - 1;
        assert!((tr.values[0][last] - 2.5 * 4.0).abs() < 1e-12);
        assert!((time_average(&tr, 0, 4.0).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn unit_atom_picks_the_grid_chain() {
        let m = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let b = simulate_paths(&m, &SimulationPlan::new(0.05, 6, 2, 4, vec![0.3])).unwrap();
        let f = PeriodicFunctional::parse("x1", 1, None, vec![(0.0, 1.0)], 1.0).unwrap();
        let tr = accumulate(&b, &f).unwrap();
        let chain = extract_grid_chain(&b, 1.0).unwrap();
        for p in 0..2 {
            let expect: f64 = chain[p].iter().sum();
            assert_eq!(*tr.values[p].last().unwrap(), expect);
            assert_eq!(tr.values[p][0], chain[p][0]);
        }
        let bad = PeriodicFunctional::parse("x1", 1, None, vec![(0.33, 1.0)], 1.0).unwrap();
        assert!(accumulate(&b, &bad).is_err());
    }

    #[test]
    fn linearity() {
        let m = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let b = simulate_paths(&m, &SimulationPlan::new(0.25, 2, 1, 9, vec![1.0])).unwrap();
        let f1 = PeriodicFunctional::parse("x1", 1, Some("1"), vec![], 1.0).unwrap();
        let f2 = PeriodicFunctional::parse("x1", 1, None, vec![(0.5, 2.0)], 1.0).unwrap();
        let both = PeriodicFunctional::parse("x1", 1, Some("1"), vec![(0.5, 2.0)], 1.0).unwrap();
        let (a, b2, c) = (accumulate(&b, &f1).unwrap(), accumulate(&b, &f2).unwrap(), accumulate(&b, &both).unwrap());
        for j in 0..c.values[0].len() {
            assert!((a.values[0][j] + b2.values[0][j] - c.values[0][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn segments_agree_with_accumulate() {
        let m = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let b = simulate_paths(&m, &SimulationPlan::new(0.1, 3, 1, 2, vec![0.0])).unwrap();
        let segs = crate::simulate::extract_segments(&b, 1.0).unwrap();
        let by_segments: f64 = segs[0].iter().map(|seg| seg[..seg.len() - 1].iter().sum::<f64>() * 0.1).sum();
        let tr = accumulate(&b, &lebesgue("x1")).unwrap();
        assert!((tr.values[0].last().unwrap() - by_segments).abs() < 1e-12);
    }

    #[test]
    fn streaming_matches_bundle() {
        let m = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
        let plan = SimulationPlan::new(0.1, 3, 3, 2, vec![0.0]);
        let b = simulate_paths(&m, &plan).unwrap();
        let f = PeriodicFunctional::parse("x1^2", 1, Some("1 + 0.5*sin(2*pi*t/T)"), vec![(0.5, 1.0)], 1.0).unwrap();
        let tr = accumulate(&b, &f).unwrap();
        let sim = PathSimulator::euler(&m, &plan).unwrap();
        let s = accumulate_streaming(&sim, &f).unwrap();
        for p in 0..3 {
            assert!((tr.values[p].last().unwrap() - s[p].unwrap()).abs() < 1e-12);
        }
        let sampled = accumulate_sampled(&sim, &f, 10).unwrap();
        for p in 0..3 {
            let v = sampled[p].as_ref().unwrap();
            assert_eq!(v.len(), 4);
            for (k, a) in v.iter().enumerate() {
                assert!((a - tr.values[p][10 * k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ergodic_limit_examples() {
        let zero = Signal::zero(1.0).unwrap();
        let law = |s: f64| ou_invariant(1.0, 1.0, &zero, s);
        let v = ergodic_limit(&lebesgue("x1"), Marginal::Gaussian(&law)).unwrap();
        assert!(v.value.abs() < 1e-10);
        let v = ergodic_limit(&lebesgue("x1^2"), Marginal::Gaussian(&law)).unwrap();
        assert!((v.value - 0.5).abs() < 1e-8);

        let two = Signal::constant(2.0, 1.0).unwrap();
        let law = |s: f64| ou_invariant(0.5, 1.0, &two, s);
        let v = ergodic_limit(&lebesgue("x1"), Marginal::Gaussian(&law)).unwrap();
        assert!((v.value - 4.0).abs() < 1e-8);
    }

    #[test]
    fn ergodic_limit_sinusoid_is_mean_of_m() {
        let sig = Signal::sine(1.0, 1.0).unwrap();
        let law = |s: f64| ou_invariant(1.0, 1.0, &sig, s);
        let v = ergodic_limit(&lebesgue("x1"), Marginal::Gaussian(&law)).unwrap();
        let mean_m = integrate(|s| compute_m(&sig, 1.0, s).unwrap(), 0.0, 1.0, &[], QuadOptions::abs(1e-12)).unwrap().value;
        assert!((v.value - mean_m).abs() < 1e-8);
        assert!(v.value.abs() < 1e-8);
        // atom at s = 0.25 picks E[X] = M(0.25)
        let f = PeriodicFunctional::parse("x1", 1, None, vec![(0.25, 1.0)], 1.0).unwrap();
        let v = ergodic_limit(&f, Marginal::Gaussian(&law)).unwrap();
        assert!((v.value - compute_m(&sig, 1.0, 0.25).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sampler_route_agrees() {
        let sig = Signal::sine(1.0, 1.0).unwrap();
        let sampler = |s: f64, n: usize, seed: u64| -> Result<Vec<Vec<f64>>> {
            let law = ou_invariant(1.0, 1.0, &sig, s)?;
            let plan = SimulationPlan::new(1.0, 1, n, seed, vec![0.0]).start_time(s).initial(crate::simulate::InitialState::Gaussian {
                mean: vec![law.mean],
                sd: vec![law.sd()],
            });
            let b = simulate_ou_exact(1.0, 1.0, &sig, &plan.horizon_steps(1).record_every(1))?;
            Ok(b.paths.iter().map(|p| vec![p.states[0]]).collect())
        };
        let f = lebesgue("x1^2");
        let mc = ergodic_limit(&f, Marginal::Sampler { sampler: &sampler, n: 4000, s_points: 16, seed: 5 }).unwrap();
        let law = |s: f64| ou_invariant(1.0, 1.0, &sig, s);
        let exact = ergodic_limit(&f, Marginal::Gaussian(&law)).unwrap();
        assert!(mc.std_error > 0.0);
        assert!((mc.value - exact.value).abs() < 4.0 * mc.std_error + 2e-3, "{mc:?} vs {exact:?}");
    }

    #[test]
    fn time_average_converges_for_exact_ou() {
        let sig = Signal::sine(1.0, 1.0).unwrap();
        let plan = SimulationPlan::new(0.05, 2000, 1, 77, vec![0.0]);
        let b = simulate_ou_exact(1.0, 1.0, &sig, &plan).unwrap();
        let tr = accumulate(&b, &lebesgue("x1")).unwrap();
        let avg = time_average(&tr, 0, 2000.0).unwrap();
        // stationary variance 0.5, correlation time 1: sd of the average ~ 1/sqrt(2000)
        assert!(avg.abs() < 4.0 / 2000f64.sqrt(), "{avg}");
    }
}
