//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::time::{Duration, Instant};

use pergo::closedform::compute_m;
use pergo::conditions::{check_levy_conditions, check_theorem11, compute_minimal_r, CheckConfig, LevyMeasure};
use pergo::exec::{map_indexed, path_rng, Execution};
use pergo::expr::{self, BinOp, Constant, Env, Expr, ExprError, Func, Node, Var};
use pergo::functionals::{accumulate, ergodic_limit, time_average, Marginal, PeriodicFunctional};
use pergo::model::{catalog_model, gbm, ou_gauss, pearson, JumpPart, JumpSize, Param, ParamMap};
use pergo::simulate::{sample_invariant_u, simulate_ou_exact, PathSimulator, SimulationPlan};
use pergo::stats::{
    bernstein_tail_check, brownian_sup, drift_check, ks_one_sample, ks_two_sample, periodicity_check, Level, Lyapunov, McOptions, Source,
    TransitionSampler,
};
use pergo::closedform::{ou_invariant, GaussianLaw};
use pergo::simulate::Scheme;
use pergo::Signal;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn within(start: Instant, budget: f64) -> (bool, Duration) {
    let el = start.elapsed();
    (el.as_secs_f64() < budget, el)
}


#[test]
fn criterion_01_ou_invariant_law() {
    let start = Instant::now();
    let sig = Signal::sine(1.0, 1.0).unwrap();
    let (burn, thin, keep) = (100usize, 5usize, 100_000usize);
    let plan = SimulationPlan::new(1.0, burn + thin * keep, 1, 2024, vec![0.0]);
    let sim = PathSimulator::exact_ou(1.0, 1.0, &sig, &plan).unwrap();
    let mut chain = Vec::with_capacity(keep);
    sim.run(0, |j, x| {
        if j > burn && (j - burn) % thin == 0 {
            chain.push(x[0]);
        }
    });
    let law = GaussianLaw::new(compute_m(&sig, 1.0, 0.0).unwrap(), 0.5).unwrap();
    let r = ks_one_sample(&chain, |x| law.cdf(x), Level::P01).unwrap();
    let (fast, el) = within(start, 10.0);
    report(
        1,
        r.pass && fast && chain.len() == keep,
        format!("KS D={:.5} vs {:.5} (n={}), M(0)={:.6}, {:.2?}", r.statistic, r.threshold, r.n, law.mean, el),
    );
}

#[test]
fn criterion_02_ergodic_limit() {
    let start = Instant::now();
    let sig = Signal::sine(1.0, 1.0).unwrap();
    let periods = 10_000usize;
    let plan = SimulationPlan::new(0.01, periods, 1, 77, vec![0.0]);
    let bundle = simulate_ou_exact(1.0, 1.0, &sig, &plan).unwrap();
    let f = PeriodicFunctional::parse("x1", 1, Some("1"), vec![], 1.0).unwrap();
    let trace = accumulate(&bundle, &f).unwrap();
    let avg = time_average(&trace, 0, periods as f64).unwrap();

    // batch means over 100 blocks of 100 periods
    let a = &trace.values[0];
    let per = bundle.steps_per_period;
    let batches = 100;
    let len = periods / batches;
    let means: Vec<f64> = (0..batches).map(|b| (a[(b + 1) * len * per] - a[b * len * per]) / len as f64).collect();
    let mb = means.iter().sum::<f64>() / batches as f64;
    let se = (means.iter().map(|m| (m - mb).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt();

    let law = |s: f64| ou_invariant(1.0, 1.0, &sig, s);
    let target = ergodic_limit(&f, Marginal::Gaussian(&law)).unwrap().value;
    let err = (avg - target).abs();
    let (fast, el) = within(start, 30.0);
    report(2, err <= 3.0 * se && err <= 0.05 && fast, format!("A_t/t={avg:.6}, limit={target:.3e}, |diff|={err:.2e}, SE={se:.2e}, {el:.2?}"));
}

#[test]
fn criterion_03_certificate_regression() {
    let start = Instant::now();
    let p = pearson(1.0, 1.0, 0.0, Signal::sine(1.0, 1.0).unwrap(), expr::parse("1", 1, &[]).unwrap(), None).unwrap();
    let rp = check_theorem11(&p, &CheckConfig::default()).unwrap();
    let t_p = start.elapsed();
    let start = Instant::now();
    let g = gbm(-1.0, 1.0, 1.0, None).unwrap();
    let rg = check_theorem11(&g, &CheckConfig::default()).unwrap();
    let t_g = start.elapsed();
    let w = rg.witnesses.nondegeneracy.as_ref().map(|w| w.x[0].abs());
    let step = rg.grid.nondegeneracy_step;
    let witness_ok = matches!((w, step), (Some(w), Some(h)) if w <= h);
    report(
        3,
        rp.verdicts.overall && !rg.verdicts.overall && witness_ok && t_p.as_secs_f64() < 5.0 && t_g.as_secs_f64() < 5.0,
        format!("pearson overall={} ({t_p:.2?}), gbm overall={} witness |x*|={w:?} step={step:?} ({t_g:.2?})", rp.verdicts.overall, rg.verdicts.overall),
    );
}

#[test]
fn criterion_04_minimal_radius_arithmetic() {
    let r = compute_minimal_r(1, 1, 1.0, 1.0, std::f64::consts::E, 1.0, 10.0).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let anchor = rel(r.log_r, r.log_r_bisection) <= 1e-9 && (r.r / 2.67e10 - 1.0).abs() < 0.01;
    let mut rng = path_rng(4, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let c0 = rng.random_range(0.05..3.0);
        let t = rng.random_range(0.1..5.0);
        let rt = rng.random_range(std::f64::consts::E..50.0);
        let eps = rng.random_range(0.05..5.0);
        let c = eps + rng.random_range(0.0..50.0);
        let v = compute_minimal_r(d, m, c0, t, rt, eps, c).unwrap();
        worst = worst.max(rel(v.log_r, v.log_r_bisection));
    }
    report(4, anchor && worst <= 1e-9, format!("R={:.6e}, log R={:.12}, bisection={:.12}, worst random rel={worst:.1e}", r.r, r.log_r, r.log_r_bisection));
}

fn em_mean_var(h: f64, n: usize, antithetic: bool) -> (f64, f64) {
    let m = ou_gauss(1.0, 1.0, Signal::zero(1.0).unwrap(), None).unwrap();
    let plan = SimulationPlan::new(h, 1, n, 55, vec![2.0]).antithetic(antithetic);
    let ends: Vec<f64> = PathSimulator::euler(&m, &plan).unwrap().final_states().into_iter().map(|v| v.unwrap()[0]).collect();
    let mean = ends.iter().sum::<f64>() / n as f64;
    let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[test]
fn criterion_05_euler_weak_accuracy() {
    let (exact_mean, exact_var) = (2.0 * (-1f64).exp(), (1.0 - (-2f64).exp()) / 2.0);
    let (mean, var) = em_mean_var(1e-3, 100_000, false);
    // antithetic pairs cancel the noise in the (linear) mean exactly, leaving the scheme bias
    let (m1, _) = em_mean_var(1e-3, 100_000, true);
    let (m2, _) = em_mean_var(5e-4, 100_000, true);
    let ratio = (m1 - exact_mean) / (m2 - exact_mean);
    report(
        5,
        (mean - exact_mean).abs() <= 5e-3 && (var - exact_var).abs() <= 5e-3 && (1.5..=3.0).contains(&ratio),
        format!("mean={mean:.6} (exact {exact_mean:.7}), var={var:.6} (exact {exact_var:.7}), bias ratio={ratio:.3}"),
    );
}

#[test]
fn criterion_06_drift_inequality() {
    let m = ou_gauss(1.0, 1.0, Signal::zero(1.0).unwrap(), None).unwrap();
    let exact = (-2f64).exp_m1() * 25.0 - (-2f64).exp_m1() / 2.0;
    let opts = McOptions { step: 1.0, execution: Execution::Sequential };
    let good = map_indexed(100, Execution::Parallel, |seed| {
        let r = drift_check(Source::Model(&m, Scheme::ExactOu), Lyapunov::SquaredNorm, &[5.0], 1.0, 10_000, seed as u64, 0.0, &opts).unwrap();
        r.details["ci_low"] <= exact && exact <= r.details["ci_high"] && r.accepted()
    })
    .into_iter()
    .filter(|&ok| ok)
    .count();
    report(6, good >= 95, format!("{good}/100 seeds cover {exact:.4} with upper bound <= -1"));
}

#[test]
fn criterion_07_bernstein_tail() {
    let bm = brownian_sup(1.0, 1.0, 1e-2);
    let rs = bernstein_tail_check(&bm, 1.0, &[1.0, 2.0, 3.0], 100_000, 7, Execution::Parallel).unwrap();
    let ok = rs.iter().all(|r| r.details["empirical"] <= r.threshold && r.accepted());
    let wrong = brownian_sup(2.0, 1.0, 1e-2);
    let bad = bernstein_tail_check(&wrong, 1.0, &[2.0], 100_000, 7, Execution::Parallel).unwrap();
    let tails: Vec<String> = rs.iter().map(|r| format!("x={}: {:.4}<={:.4}", r.details["x"], r.details["empirical"], r.threshold)).collect();
    report(7, ok && !bad[0].pass, format!("{}; mis-declared bracket tail {:.4} vs {:.4}", tails.join(", "), bad[0].details["empirical"], bad[0].threshold));
}

#[test]
fn criterion_08_levy_ou_invariant_law() {
    let jumps = JumpPart::new(1.0, JumpSize::Constant(1.0), false).unwrap();
    let zero = Signal::zero(1.0).unwrap();
    let (burn, thin, keep) = (100usize, 5usize, 10_000usize);
    let plan = SimulationPlan::new(1.0, burn + thin * keep, 1, 8, vec![0.0]);
    let sim = PathSimulator::levy_ou(1.0, &zero, &jumps, &plan).unwrap();
    let mut chain = Vec::with_capacity(keep);
    sim.run(0, |j, x| {
        if j > burn && (j - burn) % thin == 0 {
            chain.push(x[0]);
        }
    });
    let m0 = compute_m(&zero, 1.0, 0.0).unwrap();
    let u: Vec<f64> = sample_invariant_u(1.0, &jumps, keep, 9).unwrap().into_iter().map(|v| m0 + v).collect();
    let ks = ks_two_sample(&chain, &u, Level::P01).unwrap();

    let a05 = check_levy_conditions(&LevyMeasure::Stable { alpha: 0.5, c: 1.0 }).unwrap();
    let a15 = check_levy_conditions(&LevyMeasure::Stable { alpha: 1.5, c: 1.0 }).unwrap();
    let a25 = check_levy_conditions(&LevyMeasure::Stable { alpha: 2.5, c: 1.0 });
    let alpha_ok = !a05.cond11 && a15.cond11 && a15.cond12 && a25.is_err();
    report(
        8,
        ks.pass && alpha_ok,
        format!("KS D={:.5} vs {:.5}; alpha 0.5 cond11={}, 1.5 cond11={} cond12={}, 2.5 rejected={}", ks.statistic, ks.threshold, a05.cond11, a15.cond11, a15.cond12, a25.is_err()),
    );
}

fn params(pairs: &[(&str, Param)]) -> ParamMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn catalog() -> Vec<(pergo::PeriodicSDEModel, Vec<f64>)> {
    use Param::{Number as N, Text as S};
    vec![
        (catalog_model("ou-gauss", &params(&[("gamma", N(1.0)), ("sigma", N(1.0)), ("signal", S("sin(2*pi*t)".into()))])).unwrap(), vec![0.5]),
        (
            catalog_model("ou-levy", &params(&[("gamma", N(1.0)), ("signal", S("cos(2*pi*t)".into())), ("jump_rate", N(2.0)), ("jump", S("normal:0,1".into()))]))
                .unwrap(),
            vec![0.5],
        ),
        (catalog_model("pearson", &params(&[("theta", N(1.0)), ("c0", N(1.0)), ("signal", S("sin(2*pi*t)".into()))])).unwrap(), vec![0.5]),
        (catalog_model("gbm", &params(&[("mu", N(-1.0)), ("sigma", N(1.0))])).unwrap(), vec![1.0]),
        (catalog_model("degenerate2d", &params(&[("b1", S("-x1 + sin(2*pi*t)".into()))])).unwrap(), vec![0.5, -0.5]),
        (
            catalog_model(
                "custom",
                &params(&[("d", N(1.0)), ("bhat1", S("-x1^3".into())), ("signal1", S("2*sin(2*pi*t)".into())), ("s1_1", S("1".into()))]),
            )
            .unwrap(),
            vec![0.5],
        ),
    ]
}

/// Euler–Maruyama for `dX = t X dt + dW` that feeds absolute instead of wrapped time.
fn broken_wrap() -> TransitionSampler<'static> {
    let h = 0.01;
    TransitionSampler {
        dim: 1,
        period: 1.0,
        exact: false,
        sample: Box::new(move |t0, x, horizon, n, seed| {
            let steps = (horizon / h).round() as usize;
            Ok(map_indexed(n, Execution::Parallel, |i| {
                let mut rng = path_rng(seed, i as u64);
                let mut v = x[0];
                for j in 0..steps {
                    let t = t0 + j as f64 * h;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v += t * v * h + h.sqrt() * z;
                }
                Some(vec![v])
            }))
        }),
    }
}

#[test]
fn criterion_09_periodicity() {
    let opts = McOptions::new(0.01);
    let mut lines = Vec::new();
    let mut ok = true;
    for (m, x) in catalog() {
        let r = periodicity_check(Source::Model(&m, Scheme::EulerMaruyama), 0.25, &x, 0.5, 5000, 9, Level::P01, &opts).unwrap();
        ok &= r.accepted();
        lines.push(format!("{} D={:.4}/{:.4}", m.name(), r.statistic, r.threshold));
    }
    let broken = broken_wrap();
    let r = periodicity_check(Source::Sampler(&broken), 0.25, &[1.0], 0.5, 5000, 9, Level::P01, &opts).unwrap();
    lines.push(format!("broken-wrap D={:.4}/{:.4}", r.statistic, r.threshold));
    report(9, ok && !r.pass, lines.join(", "));
}

fn random_node(rng: &mut impl Rng, depth: usize) -> Node {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..6) {
            0 => Node::Num(rng.random_range(-10.0..10.0)),
            1 => Node::Num(rng.random_range(0..20) as f64),
            2 => Node::Const(if rng.random_bool(0.5) { Constant::Pi } else { Constant::E }),
            3 => Node::Var(Var::Time),
            4 => Node::Var(Var::State(rng.random_range(0..2))),
            _ => Node::Var(Var::Param(0)),
        };
    }
    let sub = |rng: &mut _| Box::new(random_node(rng, depth - 1));
    match rng.random_range(0..4) {
        0 => Node::Neg(sub(rng)),
        1 => {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][rng.random_range(0..5)];
            Node::Bin(op, sub(rng), sub(rng))
        }
        2 => {
            let f = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Sqrt, Func::Abs, Func::Tanh][rng.random_range(0..7)];
            Node::Call(f, vec![random_node(rng, depth - 1)])
        }
        _ => {
            let f = if rng.random_bool(0.5) { Func::Min } else { Func::Max };
            Node::Call(f, vec![random_node(rng, depth - 1), random_node(rng, depth - 1)])
        }
    }
}

fn same(a: &Result<f64, ExprError>, b: &Result<f64, ExprError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

#[test]
fn criterion_10_parser_suite() {
    let eval = |s: &str| expr::parse(s, 0, &[]).unwrap().eval(&Env::new(0.0, &[], &[])).unwrap();
    let precedence = [
        ("2+3*4", 14.0),
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("(2+3)*4", 20.0),
        ("8/4/2", 1.0),
        ("10-4-3", 3.0),
        ("2*-3", -6.0),
        ("2^-1", 0.5),
    ];
    let prec_ok = precedence.iter().all(|&(s, v)| eval(s) == v);

    let mut rng = path_rng(10, 0);
    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let e = Expr::from_node(random_node(&mut rng, 6), 2, &["T"]);
        let text = e.to_string();
        let Ok(back) = expr::parse(&text, 2, &["T"]) else {
            round_trip_failures += 1;
            continue;
        };
        for _ in 0..10 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let p = [rng.random_range(0.5..2.0)];
            let env = Env::new(rng.random_range(0.0..1.0), &x, &p);
            if !same(&e.eval(&env), &back.eval(&env)) {
                round_trip_failures += 1;
                break;
            }
        }
    }

    let malformed = ["sin(2*pi*t", "2+", "*3", "x1 +* 2", "foo(1)", "sin(1, 2)", "3 4", "(", ")", "", "1e", "x9", "max(1)", "2..5", "#"];
    let positioned = malformed.iter().all(|s| match expr::parse(s, 2, &[]) {
        Err(ExprError::Syntax { offset, .. }) | Err(ExprError::UnknownIdentifier { offset, .. }) | Err(ExprError::Arity { offset, .. }) => offset <= s.len(),
        _ => false,
    });
    report(
        10,
        prec_ok && round_trip_failures == 0 && positioned,
        format!("precedence {}/{} exact, round-trip failures {round_trip_failures}/1000, malformed positioned={positioned}", precedence.iter().filter(|&&(s, v)| eval(s) == v).count(), precedence.len()),
    );
}
