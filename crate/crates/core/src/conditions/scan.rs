//! Radial, angular and time grids shared by the condition checks.

use rand_distr::{Distribution, StandardNormal};

use super::{CheckConfig, Witness};
use crate::error::Result;
use crate::exec::{map_indexed, path_rng};

const DIRECTION_SEED: u64 = 0x5eed_d1ec;
/// Radii below this are laid out uniformly in ball scans, above it geometrically.
const LINEAR_BALL_LIMIT: f64 = 10.0;
const REFINE_POINTS: usize = 16;
const BISECTION_STEPS: usize = 60;

pub(crate) struct Grid {
    pub dirs: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub period: f64,
    pub refine_passes: usize,
    pub execution: crate::exec::Execution,
}

impl Grid {
    pub fn new(dim: usize, period: f64, time_dependent: bool, cfg: &CheckConfig) -> Grid {
        let times = if time_dependent {
            (0..cfg.time_n).map(|k| period * k as f64 / cfg.time_n as f64).collect()
        } else {
            vec![0.0]
        };
        Grid { dirs: directions(dim, cfg.angular_n), times, period, refine_passes: cfg.refine_passes, execution: cfg.execution }
    }

    /// Maximum of `f(s, r u)` over directions `u` and the time grid, with local
    /// refinement in time around the best point.
    pub fn sphere_max<F>(&self, f: &F, r: f64) -> Result<Witness>
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Sync,
    {
        let mut best = Witness { s: 0.0, x: Vec::new(), value: f64::NEG_INFINITY };
        let mut x = vec![0.0; self.dirs[0].len()];
        for u in &self.dirs {
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi = r * ui;
            }
            for &s in &self.times {
                let v = f(s, &x)?;
                if v > best.value || best.x.is_empty() {
                    best = Witness { s, x: x.clone(), value: v };
                }
            }
        }
        if self.times.len() > 1 {
            let mut width = self.period / self.times.len() as f64;
            for _ in 0..self.refine_passes {
                let centre = best.s;
                for k in 0..=REFINE_POINTS {
                    let s = (centre - width + 2.0 * width * k as f64 / REFINE_POINTS as f64).rem_euclid(self.period);
                    let v = f(s, &best.x)?;
                    if v > best.value {
                        best.s = s;
                        best.value = v;
                    }
                }
                width *= 2.0 / REFINE_POINTS as f64;
            }
        }
        Ok(best)
    }

    /// `sphere_max` at every radius, in parallel.
    pub fn profile<F>(&self, f: &F, radii: &[f64]) -> Result<Vec<Witness>>
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Sync,
    {
        map_indexed(radii.len(), self.execution, |i| self.sphere_max(f, radii[i])).into_iter().collect()
    }

    /// Maximum of `f` over the closed ball of radius `r`.
    pub fn ball_max<F>(&self, f: &F, r: f64, n: usize) -> Result<(Witness, f64)>
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Sync,
    {
        let (radii, step) = ball_radii(r, n);
        let prof = self.profile(f, &radii)?;
        Ok((first_max(prof), step))
    }
}

/// Index-ordered maximum (ties keep the first), so results do not depend on scheduling.
pub(crate) fn first_max(ws: Vec<Witness>) -> Witness {
    ws.into_iter().reduce(|a, b| if b.value > a.value { b } else { a }).expect("non-empty scan")
}

/// Unit directions: `+-1` in 1-D, an even angular grid in 2-D, axes plus
/// fixed pseudo-random directions beyond.
pub(crate) fn directions(dim: usize, angular_n: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..angular_n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / angular_n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::new();
            for i in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut e = vec![0.0; dim];
                    e[i] = sign;
                    out.push(e);
                }
            }
            let mut rng = path_rng(DIRECTION_SEED, dim as u64);
            for _ in 0..angular_n {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                out.push(v.into_iter().map(|c| c / norm).collect());
            }
            out
        }
    }
}

/// Geometric radii from `lo` to `hi`, both included.
pub(crate) fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..n).map(|i| if i + 1 == n { hi } else { lo * (ratio * i as f64 / (n - 1) as f64).exp() }).collect()
}

/// Radii covering `[0, r]`: uniform up to `min(r, 10)`, geometric beyond.
/// Returns the radii and the uniform step.
pub(crate) fn ball_radii(r: f64, n: usize) -> (Vec<f64>, f64) {
    let lin = r.min(LINEAR_BALL_LIMIT);
    let step = lin / (n - 1) as f64;
    let mut radii: Vec<f64> = (0..n).map(|i| step * i as f64).collect();
    if r > LINEAR_BALL_LIMIT {
        radii.extend(geometric(LINEAR_BALL_LIMIT, r, n).into_iter().skip(1));
    }
    (radii, step)
}

/// Outcome of scanning for the smallest radius outside which `f < -eps`.
pub(crate) struct RadialScan {
    pub radii: Vec<f64>,
    /// `suffix[i]` is the best witness over radii `>= radii[i]`
    pub suffix: Vec<Witness>,
    pub r_max: f64,
    pub tail_decreasing: bool,
}

impl RadialScan {
    pub fn run<F>(grid: &Grid, f: &F, cfg: &CheckConfig) -> Result<RadialScan>
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Sync,
    {
        let r_ext = 10.0 * cfg.r_max;
        let radii = geometric(cfg.r_min, r_ext, cfg.radial_n);
        let prof = grid.profile(f, &radii)?;
        let n = prof.len();
        let tail_decreasing = prof[n - 1].value < prof[n * 9 / 10].value && prof[n * 9 / 10].value < prof[n * 8 / 10].value;
        let mut suffix = prof;
        for i in (0..n - 1).rev() {
            if suffix[i + 1].value >= suffix[i].value {
                suffix[i] = suffix[i + 1].clone();
            }
        }
        Ok(RadialScan { radii, suffix, r_max: cfg.r_max, tail_decreasing })
    }

    fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.radii.len()).take_while(|&i| self.radii[i] <= self.r_max * (1.0 + 1e-12))
    }

    /// Largest `eps` for which some candidate radius passes.
    pub fn best_epsilon(&self) -> f64 {
        self.candidates().map(|i| -self.suffix[i].value).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn passes(&self, eps: f64) -> bool {
        self.best_epsilon() > eps
    }

    /// Smallest candidate radius that passes, refined by bisection between grid radii.
    /// On failure returns the witness of the worst point beyond `r_max`.
    pub fn radius<F>(&self, grid: &Grid, f: &F, eps: f64) -> Result<std::result::Result<f64, Witness>>
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Sync,
    {
        let Some(i) = self.candidates().find(|&i| self.suffix[i].value < -eps) else {
            let last = self.candidates().last().unwrap_or(0);
            return Ok(Err(self.suffix[last].clone()));
        };
        if i == 0 {
            return Ok(Ok(self.radii[0]));
        }
        let (mut lo, mut hi) = (self.radii[i - 1], self.radii[i]);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if grid.sphere_max(f, mid)?.value < -eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Ok(hi))
    }

    pub fn radial_ratio(&self) -> f64 {
        self.radii[1] / self.radii[0]
    }
}

/// Log-scale bisection for the largest passing `eps` in `[lo, hi]`.
pub(crate) fn search_epsilon(scan: &RadialScan, lo: f64, hi: f64) -> Option<f64> {
    if !scan.passes(lo) {
        return None;
    }
    if scan.passes(hi) {
        return Some(hi);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if scan.passes(mid.exp()) {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(a.exp())
}
