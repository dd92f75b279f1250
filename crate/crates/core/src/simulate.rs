//! Monte Carlo path generation and extraction of the grid and segment chains.
//!
//! Three schemes share one stepping loop:
//!
//! * Euler–Maruyama for any [`Dynamics`], with compound Poisson jumps placed
//!   at exactly simulated event times;
//! * exact Gaussian transitions for the OU model;
//! * exact flow-plus-jumps for the OU model driven by a compound Poisson process.
//!
//! Path `i` uses the random stream `(seed, i)`, so bundles are bit-identical
//! whatever the execution mode or thread count.

use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::closedform::signal_convolution;
use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, path_rng, Execution, PathRng};
use crate::model::{Dynamics, JumpPart, ModelKind, PeriodicSDEModel};
use crate::signal::Signal;
use crate::time::wrap_unchecked;

/// States beyond this magnitude count as exploded.
pub const EXPLOSION_LIMIT: f64 = 1e300;

const ALIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    ExactOu,
    LevyOu,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scheme> {
        match s {
            "euler-maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "exact-ou" => Ok(Scheme::ExactOu),
            "levy-ou" => Ok(Scheme::LevyOu),
            other => invalid(format!("unknown scheme `{other}`; expected em, exact-ou or levy-ou")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    /// independent normal coordinates
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Periods(usize),
    Steps(usize),
}

/// What to simulate: step size, horizon, number of paths, seed and scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub step: f64,
    pub horizon: Horizon,
    pub n_paths: usize,
    pub seed: u64,
    pub initial: InitialState,
    pub scheme: Scheme,
    pub start_time: f64,
    /// keep every k-th state in the bundle
    pub record_every: usize,
    /// pair paths (2i, 2i+1) with negated Gaussian increments
    pub antithetic: bool,
    pub execution: Execution,
}

impl SimulationPlan {
    pub fn new(step: f64, periods: usize, n_paths: usize, seed: u64, x0: Vec<f64>) -> SimulationPlan {
        SimulationPlan {
            step,
            horizon: Horizon::Periods(periods),
            n_paths,
            seed,
            initial: InitialState::Point(x0),
            scheme: Scheme::EulerMaruyama,
            start_time: 0.0,
            record_every: 1,
            antithetic: false,
            execution: Execution::default(),
        }
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn start_time(mut self, t0: f64) -> Self {
        self.start_time = t0;
        self
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn horizon_steps(mut self, steps: usize) -> Self {
        self.horizon = Horizon::Steps(steps);
        self
    }

    pub fn antithetic(mut self, yes: bool) -> Self {
        self.antithetic = yes;
        self
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.execution = exec;
        self
    }

    /// Steps per period, enforcing `|T - n h| <= 1e-12 T`.
    pub fn steps_per_period(&self, period: f64) -> Result<usize> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return invalid(format!("step must be positive, got {}", self.step));
        }
        let n = (period / self.step).round();
        if n < 1.0 || (period - n * self.step).abs() > ALIGN_TOL * period {
            return invalid(format!("period {period} is not an integer multiple of step {}", self.step));
        }
        Ok(n as usize)
    }

    pub fn total_steps(&self, period: f64) -> Result<usize> {
        let n_per = self.steps_per_period(period)?;
        Ok(match self.horizon {
            Horizon::Periods(k) => k * n_per,
            Horizon::Steps(n) => n,
        })
    }

    fn validate(&self, dim: usize, period: f64) -> Result<(usize, usize)> {
        let n_per = self.steps_per_period(period)?;
        let steps = self.total_steps(period)?;
        if self.n_paths == 0 {
            return invalid("n_paths must be >= 1");
        }
        if steps == 0 {
            return invalid("horizon must contain at least one step");
        }
        if self.record_every == 0 || steps % self.record_every != 0 {
            return invalid(format!("record_every={} must divide the {steps} steps", self.record_every));
        }
        if !self.start_time.is_finite() {
            return invalid("start time must be finite");
        }
        match &self.initial {
            InitialState::Point(x) if x.len() != dim => invalid(format!("x0 has length {}, expected {dim}", x.len())),
            InitialState::Gaussian { mean, sd } if mean.len() != dim || sd.len() != dim => {
                invalid(format!("initial law must have dimension {dim}"))
            }
            _ => Ok((n_per, steps)),
        }
    }
}

/// One simulated path: recorded states (row-major, `dim` per time) and the
/// first step at which the path left the finite range, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub states: Vec<f64>,
    pub exploded_at: Option<usize>,
}

/// `N` paths on the grid `t_j = start + j * record_every * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub dim: usize,
    pub step: f64,
    pub record_every: usize,
    pub start_time: f64,
    pub period: f64,
    pub steps_per_period: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub paths: Vec<PathRecord>,
}

impl TrajectoryBundle {
    /// Number of recorded times per (non-exploded) path.
    pub fn recorded_len(&self) -> usize {
        self.steps / self.record_every + 1
    }

    pub fn recorded_step(&self) -> f64 {
        self.step * self.record_every as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.start_time + (j * self.record_every) as f64 * self.step
    }

    pub fn state(&self, path: usize, j: usize) -> &[f64] {
        &self.paths[path].states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn explosion_count(&self) -> usize {
        self.paths.iter().filter(|p| p.exploded_at.is_some()).count()
    }

    /// Final states of the paths that did not explode.
    pub fn final_states(&self) -> Vec<&[f64]> {
        let last = self.recorded_len() - 1;
        self.paths
            .iter()
            .enumerate()
            .filter(|(_, p)| p.exploded_at.is_none())
            .map(|(i, _)| self.state(i, last))
            .collect()
    }

    fn grid_stride(&self, period: f64) -> Result<usize> {
        if (period - self.steps_per_period as f64 * self.step).abs() > ALIGN_TOL * period {
            return invalid(format!("period {period} does not match the bundle grid"));
        }
        if !self.steps_per_period.is_multiple_of(self.record_every) {
            return invalid("recorded grid does not contain the period multiples");
        }
        Ok(self.steps_per_period / self.record_every)
    }
}

/// Per-path sequence `X_k = xi_{kT}` (row-major, `dim` per entry).
pub fn extract_grid_chain(bundle: &TrajectoryBundle, period: f64) -> Result<Vec<Vec<f64>>> {
    let stride = bundle.grid_stride(period)?;
    let d = bundle.dim;
    Ok(bundle
        .paths
        .iter()
        .map(|p| {
            let n = p.states.len() / d;
            (0..n).step_by(stride).flat_map(|j| p.states[j * d..(j + 1) * d].iter().copied()).collect()
        })
        .collect())
}

/// Per-path list of period segments `(xi_{kT + s})_{0 <= s <= T}`; neighbouring
/// segments share their endpoint.
pub fn extract_segments(bundle: &TrajectoryBundle, period: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let stride = bundle.grid_stride(period)?;
    let d = bundle.dim;
    Ok(bundle
        .paths
        .iter()
        .map(|p| {
            let n = p.states.len() / d;
            let full = (n - 1) / stride;
            (0..full).map(|k| p.states[k * stride * d..((k + 1) * stride + 1) * d].to_vec()).collect()
        })
        .collect())
}

enum Stepper<'a> {
    Euler { dynamics: &'a dyn Dynamics },
    ExactOu { decay: f64, sd: f64, shifts: Vec<f64> },
    LevyOu { gamma: f64, decay: f64, shifts: Vec<f64>, jumps: JumpPart },
}

/// Reusable per-path simulator; `run` can be called for any path index.
pub struct PathSimulator<'a> {
    stepper: Stepper<'a>,
    dim: usize,
    noise_dim: usize,
    period: f64,
    step: f64,
    steps: usize,
    n_per: usize,
    phase0: f64,
    plan: SimulationPlan,
}

/// Outcome of a single path run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathOutcome {
    pub exploded_at: Option<usize>,
}

impl<'a> PathSimulator<'a> {
    /// Euler–Maruyama on an arbitrary coefficient set.
    pub fn euler(dynamics: &'a dyn Dynamics, plan: &SimulationPlan) -> Result<PathSimulator<'a>> {
        let (n_per, steps) = plan.validate(dynamics.dim(), dynamics.period())?;
        Ok(PathSimulator {
            stepper: Stepper::Euler { dynamics },
            dim: dynamics.dim(),
            noise_dim: dynamics.noise_dim(),
            period: dynamics.period(),
            step: plan.step,
            steps,
            n_per,
            phase0: wrap_unchecked(plan.start_time, dynamics.period()),
            plan: plan.clone(),
        })
    }

    /// Exact Gaussian transitions of `dX = (S - gamma X) dt + sigma dW`.
    pub fn exact_ou(gamma: f64, sigma: f64, signal: &Signal, plan: &SimulationPlan) -> Result<PathSimulator<'a>> {
        if !(gamma > 0.0) || !(sigma >= 0.0) {
            return invalid(format!("exact OU needs gamma > 0 and sigma >= 0, got gamma={gamma}, sigma={sigma}"));
        }
        let period = signal.period();
        let (n_per, steps) = plan.validate(1, period)?;
        let h = plan.step;
        let phase0 = wrap_unchecked(plan.start_time, period);
        let shifts = phase_shifts(signal, gamma, h, phase0, n_per)?;
        let sd = (-(-2.0 * gamma * h).exp_m1() * sigma * sigma / (2.0 * gamma)).sqrt();
        Ok(PathSimulator {
            stepper: Stepper::ExactOu { decay: (-gamma * h).exp(), sd, shifts },
            dim: 1,
            noise_dim: 1,
            period,
            step: h,
            steps,
            n_per,
            phase0,
            plan: plan.clone(),
        })
    }

    /// Exact simulation of `dX = (S - gamma X) dt + dZ` with compound Poisson `Z`.
    pub fn levy_ou(gamma: f64, signal: &Signal, jumps: &JumpPart, plan: &SimulationPlan) -> Result<PathSimulator<'a>> {
        if !(gamma > 0.0) {
            return invalid(format!("gamma must be positive, got {gamma}"));
        }
        let period = signal.period();
        let (n_per, steps) = plan.validate(1, period)?;
        let h = plan.step;
        let phase0 = wrap_unchecked(plan.start_time, period);
        let mut shifts = phase_shifts(signal, gamma, h, phase0, n_per)?;
        let comp = jumps.compensator_rate() * (-(-gamma * h).exp_m1()) / gamma;
        for s in shifts.iter_mut() {
            *s -= comp;
        }
        Ok(PathSimulator {
            stepper: Stepper::LevyOu { gamma, decay: (-gamma * h).exp(), shifts, jumps: jumps.clone() },
            dim: 1,
            noise_dim: 0,
            period,
            step: h,
            steps,
            n_per,
            phase0,
            plan: plan.clone(),
        })
    }

    /// Dispatches on `plan.scheme`.
    pub fn for_model(model: &'a PeriodicSDEModel, plan: &SimulationPlan) -> Result<PathSimulator<'a>> {
        match (plan.scheme, model.kind()) {
            (Scheme::EulerMaruyama, _) => PathSimulator::euler(model, plan),
            (Scheme::ExactOu, ModelKind::OuGauss { gamma, sigma, signal }) => PathSimulator::exact_ou(*gamma, *sigma, signal, plan),
            (Scheme::LevyOu, ModelKind::OuLevy { gamma, signal }) => {
                let jumps = model.jumps().expect("ou-levy models carry a jump part");
                PathSimulator::levy_ou(*gamma, signal, jumps, plan)
            }
            (scheme, _) => Err(Error::Unsupported(format!("scheme {scheme:?} is not available for model `{}`", model.name()))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn steps_per_period(&self) -> usize {
        self.n_per
    }

    pub fn plan(&self) -> &SimulationPlan {
        &self.plan
    }

    /// Simulates path `index`, calling `observe(j, state)` for `j = 0..=steps`.
    /// Stops at the first non-finite or over-limit state.
    pub fn run<F: FnMut(usize, &[f64])>(&self, index: usize, mut observe: F) -> PathOutcome {
        let (stream, sign) = if self.plan.antithetic { ((index / 2) as u64, if index % 2 == 1 { -1.0 } else { 1.0 }) } else { (index as u64, 1.0) };
        let mut rng = path_rng(self.plan.seed, stream);
        let mut x = match &self.plan.initial {
            InitialState::Point(x0) => x0.clone(),
            InitialState::Gaussian { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sign * s * z
                })
                .collect(),
        };
        if !finite_state(&x) {
            return PathOutcome { exploded_at: Some(0) };
        }
        observe(0, &x);
        let h = self.step;
        let sqrt_h = h.sqrt();
        let t0 = self.plan.start_time;
        let mut drift = vec![0.0; self.dim];
        let mut sigma = vec![0.0; self.dim * self.noise_dim];
        let mut z = vec![0.0; self.noise_dim];
        let jump_part = match &self.stepper {
            Stepper::Euler { dynamics } => dynamics.jumps().filter(|j| j.rate > 0.0).cloned(),
            Stepper::LevyOu { jumps, .. } if jumps.rate > 0.0 => Some(jumps.clone()),
            _ => None,
        };
        let inter_arrival = jump_part.as_ref().map(|j| Exp::new(j.rate).expect("positive rate"));
        let mut next_event = match &inter_arrival {
            Some(e) => t0 + e.sample(&mut rng),
            None => f64::INFINITY,
        };

        for j in 0..self.steps {
            let phase_index = j % self.n_per;
            let t_next = t0 + (j + 1) as f64 * h;
            match &self.stepper {
                Stepper::Euler { dynamics } => {
                    let phase = wrap_unchecked(self.phase0 + phase_index as f64 * h, self.period);
                    if dynamics.drift(phase, &x, &mut drift).is_err() || dynamics.diffusion(&x, &mut sigma).is_err() {
                        return PathOutcome { exploded_at: Some(j + 1) };
                    }
                    for zk in z.iter_mut() {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        *zk = sign * v;
                    }
                    for i in 0..self.dim {
                        let noise: f64 = (0..self.noise_dim).map(|k| sigma[i * self.noise_dim + k] * z[k]).sum();
                        x[i] += drift[i] * h + noise * sqrt_h;
                    }
                    if let (Some(jumps), Some(ia)) = (&jump_part, &inter_arrival) {
                        while next_event <= t_next {
                            x[0] += jumps.size.sample(&mut rng);
                            next_event += ia.sample(&mut rng);
                        }
                    }
                }
                Stepper::ExactOu { decay, sd, shifts } => {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    x[0] = decay * x[0] + shifts[phase_index] + sd * sign * v;
                }
                Stepper::LevyOu { gamma, decay, shifts, jumps } => {
                    let mut next = decay * x[0] + shifts[phase_index];
                    if let Some(ia) = &inter_arrival {
                        while next_event <= t_next {
                            next += jumps.size.sample(&mut rng) * (-gamma * (t_next - next_event)).exp();
                            next_event += ia.sample(&mut rng);
                        }
                    }
                    x[0] = next;
                }
            }
            if !finite_state(&x) {
                return PathOutcome { exploded_at: Some(j + 1) };
            }
            observe(j + 1, &x);
        }
        PathOutcome { exploded_at: None }
    }

    /// Runs every path and keeps every `record_every`-th state.
    pub fn bundle(&self) -> TrajectoryBundle {
        let record_every = self.plan.record_every;
        let n_rec = self.steps / record_every + 1;
        let dim = self.dim;
        let paths = map_indexed(self.plan.n_paths, self.plan.execution, |i| {
            let mut states = Vec::with_capacity(n_rec * dim);
            let outcome = self.run(i, |j, x| {
                if j % record_every == 0 {
                    states.extend_from_slice(x);
                }
            });
            PathRecord { states, exploded_at: outcome.exploded_at }
        });
        TrajectoryBundle {
            dim,
            step: self.step,
            record_every,
            start_time: self.plan.start_time,
            period: self.period,
            steps_per_period: self.n_per,
            steps: self.steps,
            seed: self.plan.seed,
            scheme: self.plan.scheme,
            paths,
        }
    }

    /// Final state of every path (`None` for exploded paths).
    pub fn final_states(&self) -> Vec<Option<Vec<f64>>> {
        map_indexed(self.plan.n_paths, self.plan.execution, |i| {
            let mut last = Vec::new();
            let out = self.run(i, |j, x| {
                if j == self.steps {
                    last = x.to_vec();
                }
            });
            out.exploded_at.is_none().then_some(last)
        })
    }
}

fn finite_state(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= EXPLOSION_LIMIT)
}

fn phase_shifts(signal: &Signal, gamma: f64, h: f64, phase0: f64, n_per: usize) -> Result<Vec<f64>> {
    if signal.is_zero() {
        return Ok(vec![0.0; n_per]);
    }
    (0..n_per)
        .map(|p| {
            let s = phase0 + p as f64 * h;
            signal_convolution(signal, gamma, s, s + h)
        })
        .collect()
}

/// Euler–Maruyama paths of a model (with jumps at exact event times, if any).
pub fn simulate_paths(model: &PeriodicSDEModel, plan: &SimulationPlan) -> Result<TrajectoryBundle> {
    Ok(PathSimulator::euler(model, plan)?.bundle())
}

/// Paths with exact OU transitions on the plan's grid.
pub fn simulate_ou_exact(gamma: f64, sigma: f64, signal: &Signal, plan: &SimulationPlan) -> Result<TrajectoryBundle> {
    let mut bundle = PathSimulator::exact_ou(gamma, sigma, signal, plan)?.bundle();
    bundle.scheme = Scheme::ExactOu;
    Ok(bundle)
}

/// Exact paths of the OU process driven by a compound Poisson process.
pub fn simulate_levy_ou(gamma: f64, signal: &Signal, jumps: &JumpPart, plan: &SimulationPlan) -> Result<TrajectoryBundle> {
    let mut bundle = PathSimulator::levy_ou(gamma, signal, jumps, plan)?.bundle();
    bundle.scheme = Scheme::LevyOu;
    Ok(bundle)
}

/// Simulates a catalog model with the scheme named in the plan.
pub fn simulate(model: &PeriodicSDEModel, plan: &SimulationPlan) -> Result<TrajectoryBundle> {
    let mut bundle = PathSimulator::for_model(model, plan)?.bundle();
    bundle.scheme = plan.scheme;
    Ok(bundle)
}

/// Samples of `U = int_0^inf exp(-gamma v) dZ_v`, the stationary fluctuation of
/// the jump-driven OU process around `M(s)`.
///
/// Points of the Poisson process are generated until `exp(-gamma v)` drops
/// below `1e-18`, which truncates nothing visible in double precision.
pub fn sample_invariant_u(gamma: f64, jumps: &JumpPart, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    let horizon = 18.0 * std::f64::consts::LN_10 / gamma;
    let drift_part = -jumps.compensator_rate() / gamma;
    Ok(map_indexed(n, Execution::Parallel, |i| {
        let mut rng = path_rng(seed, i as u64);
        let mut u = drift_part;
        if jumps.rate > 0.0 {
            let ia = Exp::new(jumps.rate).expect("positive rate");
            let mut v = ia.sample(&mut rng);
            while v < horizon {
                u += jumps.size.sample(&mut rng) * (-gamma * v).exp();
                v += ia.sample(&mut rng);
            }
        }
        u
    }))
}

/// Samples of `Z_tau`, the jump process evaluated at an independent
/// `Exp(gamma)` time. Same mean as [`sample_invariant_u`], different law.
pub fn sample_jump_process_at_exponential_time(gamma: f64, jumps: &JumpPart, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    let clock = Exp::new(gamma).expect("positive gamma");
    let comp = jumps.compensator_rate();
    Ok(map_indexed(n, Execution::Parallel, |i| {
        let mut rng: PathRng = path_rng(seed, i as u64);
        let tau = clock.sample(&mut rng);
        let mut z = -comp * tau;
        if jumps.rate > 0.0 {
            let ia = Exp::new(jumps.rate).expect("positive rate");
            let mut v = ia.sample(&mut rng);
            while v <= tau {
                z += jumps.size.sample(&mut rng);
                v += ia.sample(&mut rng);
            }
        }
        z
    }))
}
