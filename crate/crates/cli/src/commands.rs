use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use pergo::closedform::{compute_m, ou_invariant};
use pergo::conditions::{
    check_aronson, check_degenerate_2d, check_levy_conditions, check_signal_condition, check_theorem11, check_veretennikov, LevyMeasure,
};
use pergo::exec::derive_seed;
use pergo::functionals::{accumulate_sampled, ergodic_limit, Marginal};
use pergo::model::ModelKind;
use pergo::simulate::{extract_grid_chain, simulate, PathSimulator, SimulationPlan};
use pergo::stats::{kde_density, ks_one_sample, ks_two_sample, Bandwidth, Level, TestResult, Z99};
use pergo::Result;

use crate::config::RunConfig;
use crate::output::{num, Sink};

/// Verdict of a command: `None` when it only produces data.
pub type Outcome = Option<bool>;

fn plan(cfg: &RunConfig) -> SimulationPlan {
    let p = &cfg.plan;
    SimulationPlan::new(p.step, p.periods, p.n_paths, p.seed, p.x0.clone())
        .scheme(p.scheme)
        .start_time(p.start_time)
        .record_every(p.record_every)
}

fn io(e: std::io::Error) -> pergo::Error {
    pergo::Error::InvalidArgument(format!("writing output: {e}"))
}

pub fn check(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let model = &cfg.model;
    let mut doc = BTreeMap::<String, Value>::new();
    let mut verdicts = Vec::new();
    doc.insert("model".into(), json!(model.name()));
    if let Some(jumps) = model.jumps() {
        let levy = check_levy_conditions(&LevyMeasure::CompoundPoisson(jumps.clone()))?;
        verdicts.push(levy.cond11 && levy.cond12);
        doc.insert("levy".into(), serde_json::to_value(&levy).expect("serializable"));
        doc.insert("note".into(), json!("the generator-based certificate is not defined for jump models"));
    } else {
        let report = check_theorem11(model, &cfg.check)?;
        verdicts.push(report.verdicts.overall);
        eprintln!(
            "certificate: overall={} lyapunov={} minimal_r={} nondegeneracy={}",
            report.verdicts.overall, report.verdicts.lyapunov, report.verdicts.minimal_r, report.verdicts.nondegeneracy
        );
        doc.insert("certificate".into(), serde_json::to_value(&report).expect("serializable"));
    }
    if cfg.extras.signal {
        let r = check_signal_condition(model, &cfg.check)?;
        verdicts.push(r.pass);
        doc.insert("signal".into(), serde_json::to_value(&r).expect("serializable"));
    }
    if cfg.extras.aronson {
        let r = check_aronson(model, &cfg.check)?;
        verdicts.push(r.pass);
        doc.insert("aronson".into(), serde_json::to_value(&r).expect("serializable"));
    }
    if let Some((m, r)) = cfg.extras.veretennikov {
        let rep = check_veretennikov(model, m, r, &cfg.check)?;
        verdicts.push(rep.pass);
        doc.insert("veretennikov".into(), serde_json::to_value(&rep).expect("serializable"));
    }
    if cfg.extras.degenerate {
        let r = check_degenerate_2d(model, &cfg.check)?;
        verdicts.push(r.pass);
        doc.insert("degenerate2d".into(), serde_json::to_value(&r).expect("serializable"));
    }
    let pass = verdicts.iter().all(|&v| v);
    doc.insert("pass".into(), json!(pass));
    sink.json("check.json", &doc).map_err(io)?;
    Ok(Some(pass))
}

fn state_header(first: &[&str], dim: usize) -> Vec<String> {
    first.iter().map(|s| s.to_string()).chain((1..=dim).map(|i| format!("x{i}"))).collect()
}

pub fn simulate_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let model = &cfg.model;
    let bundle = simulate(model, &plan(cfg))?;
    let d = bundle.dim;
    let rows = bundle.paths.iter().enumerate().flat_map(|(p, path)| {
        let bundle = &bundle;
        path.states.chunks(d).enumerate().map(move |(j, x)| {
            let mut row = vec![p.to_string(), num(bundle.time(j))];
            row.extend(x.iter().map(|v| num(*v)));
            row
        })
    });
    sink.csv("trajectories.csv", &state_header(&["path_id", "t"], d), rows).map_err(io)?;
    if bundle.steps_per_period % bundle.record_every == 0 {
        let chain = extract_grid_chain(&bundle, model.period())?;
        let rows = chain.iter().enumerate().flat_map(|(p, c)| {
            c.chunks(d).enumerate().map(move |(k, x)| {
                let mut row = vec![p.to_string(), k.to_string()];
                row.extend(x.iter().map(|v| num(*v)));
                row
            })
        });
        sink.csv("grid_chain.csv", &state_header(&["path_id", "k"], d), rows).map_err(io)?;
    }
    let exploded: Vec<usize> = bundle.paths.iter().enumerate().filter(|(_, p)| p.exploded_at.is_some()).map(|(i, _)| i).collect();
    if !exploded.is_empty() {
        eprintln!("warning: {} of {} paths exploded", exploded.len(), bundle.paths.len());
    }
    sink.json(
        "simulate.json",
        &json!({
            "model": model.name(),
            "scheme": bundle.scheme,
            "n_paths": bundle.paths.len(),
            "steps": bundle.steps,
            "step": bundle.step,
            "explosions": exploded.len(),
            "exploded_paths": exploded,
        }),
    )
    .map_err(io)?;
    Ok(None)
}

#[derive(Debug, Serialize)]
struct ErgodicSummary {
    model: String,
    functional: String,
    horizon: f64,
    n_paths: usize,
    explosions: usize,
    inconclusive: bool,
    empirical: f64,
    std_error: f64,
    /// batch means over periods (single path) or spread across paths
    std_error_method: &'static str,
    ci99: [f64; 2],
    analytic: Option<f64>,
    abs_error: Option<f64>,
    pass: Option<bool>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn ergodic(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let model = &cfg.model;
    let f = cfg.functional()?;
    let plan = plan(cfg);
    let sim = PathSimulator::for_model(model, &plan)?;
    let n_per = sim.steps_per_period();
    let samples = accumulate_sampled(&sim, &f, n_per)?;
    let period = model.period();

    let rows = samples.iter().enumerate().filter_map(|(p, v)| v.as_ref().map(|v| (p, v))).flat_map(|(p, v)| {
        v.iter().enumerate().skip(1).map(move |(k, a)| {
            let t = k as f64 * period;
            vec![p.to_string(), num(t), num(*a), num(a / t)]
        })
    });
    sink.csv("ergodic_trace.csv", &["path_id".into(), "t".into(), "A_t".into(), "A_t_over_t".into()], rows).map_err(io)?;

    let survivors: Vec<&Vec<f64>> = samples.iter().flatten().collect();
    let explosions = samples.len() - survivors.len();
    let inconclusive = explosions as f64 > 0.01 * samples.len() as f64;
    if survivors.is_empty() {
        return Err(pergo::Error::Numerical { reason: "every path exploded".into(), achieved: explosions as f64 });
    }
    let horizon = cfg.plan.periods as f64 * period;
    let (empirical, std_error, method) = if survivors.len() >= 2 {
        let avgs: Vec<f64> = survivors.iter().map(|v| v.last().unwrap() / horizon).collect();
        let (m, se) = mean_se(&avgs);
        (m, se, "across paths")
    } else {
        let v = survivors[0];
        let k = cfg.plan.periods;
        let batches = if k >= 20 { 20 } else { k };
        let len = k / batches;
        let means: Vec<f64> = (0..batches).map(|b| (v[(b + 1) * len] - v[b * len]) / (len as f64 * period)).collect();
        let (_, se) = mean_se(&means);
        (v[k] / horizon, se, "batch means over periods")
    };
    let half = Z99 * std_error;
    let analytic = match model.kind() {
        ModelKind::OuGauss { gamma, sigma, signal } if f.dim() == 1 => {
            let law = |s: f64| ou_invariant(*gamma, *sigma, signal, s);
            Some(ergodic_limit(&f, Marginal::Gaussian(&law))?.value)
        }
        _ => None,
    };
    let pass = analytic.map(|a| (empirical - a).abs() <= half && !inconclusive);
    let summary = ErgodicSummary {
        model: model.name().to_string(),
        functional: cfg.functional.integrand.clone(),
        horizon,
        n_paths: samples.len(),
        explosions,
        inconclusive,
        empirical,
        std_error,
        std_error_method: method,
        ci99: [empirical - half, empirical + half],
        analytic,
        abs_error: analytic.map(|a| (empirical - a).abs()),
        pass,
    };
    eprintln!(
        "ergodic: empirical={empirical:.6} +/- {half:.2e} (99%), analytic={}",
        analytic.map_or("n/a".to_string(), |a| format!("{a:.6}"))
    );
    sink.json("ergodic.json", &summary).map_err(io)?;
    Ok(if inconclusive { Some(false) } else { pass })
}

#[derive(Debug, Serialize)]
struct InvariantSummary {
    model: String,
    oracle: String,
    phase: f64,
    retained: usize,
    explosions: usize,
    test: TestResult,
}

/// Grid-chain states after burn-in, thinned, pooled across paths.
fn pooled_chain(cfg: &RunConfig) -> Result<(Vec<f64>, usize)> {
    let plan = plan(cfg);
    let sim = PathSimulator::for_model(&cfg.model, &plan)?;
    let n_per = sim.steps_per_period();
    let (burn, thin) = (cfg.plan.burn_in, cfg.plan.thin);
    if burn >= cfg.plan.periods {
        return Err(pergo::Error::InvalidArgument(format!("burn_in ({burn}) must be smaller than K ({})", cfg.plan.periods)));
    }
    let per_path = pergo::exec::map_indexed(plan.n_paths, plan.execution, |i| {
        let mut out = Vec::new();
        let run = sim.run(i, |j, x| {
            if j % n_per == 0 {
                let k = j / n_per;
                if k >= burn && (k - burn) % thin == 0 {
                    out.push(x[0]);
                }
            }
        });
        run.exploded_at.is_none().then_some(out)
    });
    let explosions = per_path.iter().filter(|p| p.is_none()).count();
    Ok((per_path.into_iter().flatten().flatten().collect(), explosions))
}

pub fn invariant_test(cfg: &RunConfig, level: Level, sink: &mut Sink) -> Result<Outcome> {
    let model = &cfg.model;
    if model.dim() != 1 {
        return Err(pergo::Error::Unsupported("invariant-test needs a one-dimensional model".into()));
    }
    let phase = pergo::wrap_time(cfg.plan.start_time, model.period())?;
    let (chain, explosions) = pooled_chain(cfg)?;
    let (test, oracle) = match model.kind() {
        ModelKind::OuGauss { gamma, sigma, signal } => {
            let law = ou_invariant(*gamma, *sigma, signal, phase)?;
            (ks_one_sample(&chain, |x| law.cdf(x), level)?, format!("N({}, {})", law.mean, law.variance))
        }
        ModelKind::OuLevy { gamma, signal } => {
            let jumps = model.jumps().expect("jump model");
            let m = compute_m(signal, *gamma, phase)?;
            let u: Vec<f64> = pergo::simulate::sample_invariant_u(*gamma, jumps, chain.len(), derive_seed(cfg.plan.seed, 0x5eed))?
                .into_iter()
                .map(|v| m + v)
                .collect();
            (ks_two_sample(&chain, &u, level)?, format!("M(s) + U, M(s) = {m}"))
        }
        _ => return Err(pergo::Error::Unsupported(format!("no invariant-law oracle for model `{}`", model.name()))),
    };
    let mut test = test;
    test.inconclusive = explosions as f64 > 0.01 * cfg.plan.n_paths as f64;
    if chain.len() >= 30 {
        let lo = chain.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = chain.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let points: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
        let dens = kde_density(&chain, Bandwidth::Silverman, &points)?;
        let rows = points.iter().zip(&dens).map(|(p, d)| vec![num(*p), num(*d)]);
        sink.csv("kde.csv", &["point".into(), "density".into()], rows).map_err(io)?;
    }
    eprintln!("invariant-test: {} statistic={:.5} threshold={:.5} n={}", test.description, test.statistic, test.threshold, test.n);
    let accepted = test.accepted();
    sink.json("invariant.json", &InvariantSummary { model: model.name().to_string(), oracle, phase, retained: chain.len(), explosions, test })
        .map_err(io)?;
    Ok(Some(accepted))
}

/// Runs every applicable command; commands without an oracle are skipped.
pub fn report(cfg: &RunConfig, level: Level, sink: &mut Sink) -> Result<Outcome> {
    let mut index = BTreeMap::<&str, Value>::new();
    let mut all = true;
    let mut record = |name: &'static str, r: Result<Outcome>| -> Result<()> {
        match r {
            Ok(o) => {
                all &= o.unwrap_or(true);
                index.insert(name, json!({ "verdict": o.map_or("none", |p| if p { "pass" } else { "fail" }) }));
                Ok(())
            }
            Err(pergo::Error::Unsupported(why)) => {
                index.insert(name, json!({ "verdict": "skipped", "reason": why }));
                Ok(())
            }
            Err(e) => Err(e),
        }
    };
    record("check", check(cfg, sink))?;
    record("simulate", simulate_cmd(cfg, sink))?;
    record("ergodic", ergodic(cfg, sink))?;
    record("invariant-test", invariant_test(cfg, level, sink))?;
    let files: Vec<&str> = sink.artifacts.iter().map(|a| a.file.as_str()).collect();
    let doc = json!({ "commands": index, "files": files, "pass": all });
    sink.json("index.json", &doc).map_err(io)?;
    Ok(Some(all))
}
