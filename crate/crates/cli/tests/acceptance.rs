//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier criterion fails. The process exits nonzero if any criterion fails.

use std::cell::Cell;
use std::error::Error as StdError;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lyapcert::catalog::{
    linear_baseline, scalar_example, scalar_example_distance, scalar_example_metric, scalar_example_oracle,
    transverse_counterexample,
};
use lyapcert::dynamics::{flow, variational_flow, FlowOptions, LinearSystem, SystemModel, TransverseModel, VectorField};
use lyapcert::expr::{parse_system, SystemSpec};
use lyapcert::geometry::{
    dini_derivative_v, distance_to_origin, geodesic_ivp, unit_velocity, Envelope, GeometryOptions, DINI_STEPS,
};
use lyapcert::linalg::spectral_abscissa;
use lyapcert::metric::{
    gramian_at_origin, lie_derivative_residual, metric_bounds, ConstantMetric, FnMetric, GramianMetric, MetricField,
    RescaledMetric,
};
use lyapcert::sampling::in_box;
use lyapcert::stabilization::{ClosedLoop, ControlSystem};
use lyapcert::stability::{
    estimate_gain_function, estimate_les, estimate_linearized_decay, DecayEstimate, EstimateOptions,
};
use lyapcert_cli::{execute, Command, RunConfig, Verdict};
use nalgebra::DMatrix;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};

type Res<T> = Result<T, Box<dyn StdError>>;

/// Named sub-checks of one criterion with the measured value in the text.
#[derive(Default)]
struct Checks(Vec<(bool, String)>);

impl Checks {
    fn add(&mut self, ok: bool, text: String) {
        self.0.push((ok, text));
    }

    fn le(&mut self, name: &str, value: f64, limit: f64) {
        self.add(value <= limit, format!("{name} = {value:.3e} <= {limit:.1e}"));
    }

    fn ge(&mut self, name: &str, value: f64, limit: f64) {
        self.add(value >= limit, format!("{name} = {value:.6e} >= {limit:.6e}"));
    }
}

const GRID: [f64; 5] = [-2.0, -1.0, 0.5, 1.0, 2.0];
const RADII: [f64; 3] = [0.5, 1.0, 2.0];

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn uniform(runner: &mut TestRunner, lo: f64, hi: f64) -> f64 {
    (lo..hi).new_tree(runner).expect("uniform range").current()
}

fn scalar_model() -> Res<SystemModel> {
    Ok(SystemModel::from_exprs(SystemSpec::parse(&scalar_example().spec)?.f)?)
}

fn scalar_decay(m: &SystemModel) -> Res<DecayEstimate> {
    Ok(estimate_linearized_decay(m, &RADII, 8, 20.0, &EstimateOptions::default())?)
}

fn linear_lyapunov() -> Res<Checks> {
    let mut rng = TestRunner::deterministic();
    let (mut worst, mut worst_oracle, mut worst_gap) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..10 {
        let n = 1 + k % 4;
        let m = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -2.0, 2.0));
        let margin = uniform(&mut rng, 0.1, 1.0);
        let a = &m - DMatrix::identity(n, n) * (spectral_abscissa(&m) + margin);
        let b = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -1.0, 1.0));
        let q = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let p = gramian_at_origin(&LinearSystem::new(a.clone())?, &q)?.p;
        let oracle = linear_baseline(&a, &q)?.p;
        worst = worst.max((a.transpose() * &p + &p * &a + &q).amax());
        worst_oracle = worst_oracle.max((a.transpose() * &oracle + &oracle * &a + &q).amax());
        worst_gap = worst_gap.max((&p - &oracle).amax() / oracle.amax());
    }
    let mut c = Checks::default();
    c.le("max |A'P + PA + Q|", worst, 1e-8);
    c.le("oracle residual", worst_oracle, 1e-8);
    c.le("max relative gap to oracle P", worst_gap, 1e-8);
    Ok(c)
}

fn scalar_flow() -> Res<Checks> {
    let m = scalar_model()?;
    let tr = flow(&m, &[1.0], 5.0, &FlowOptions::new(1e-10))?;
    let mut worst = 0.0f64;
    for t in [0.5, 1.0, 2.0, 5.0] {
        let got = tr.state_at(t).ok_or("time outside trajectory")?[0];
        worst = worst.max((got - scalar_example_oracle(1.0, t)).abs());
    }
    let mut c = Checks::default();
    c.le("max |E(1,t) - oracle|", worst, 1e-6);
    Ok(c)
}

fn scalar_metric_bounds() -> Res<Checks> {
    let m = scalar_model()?;
    let metric = GramianMetric::new(&m, DMatrix::identity(1, 1), scalar_decay(&m)?, 1e-10)?;
    let mut c = Checks::default();
    let mut lowest = f64::INFINITY;
    let mut gap = 0.0f64;
    for e in GRID {
        let p = metric.eval(&[e])?[(0, 0)];
        lowest = lowest.min(p);
        gap = gap.max((p - scalar_example_metric(e, 1.0)).abs());
    }
    c.ge("min P(e) on grid", lowest, 0.5 - 1e-6);
    let p1 = metric.eval(&[1.0])?[(0, 0)];
    c.le("P(1)", p1, (4.0 * 1f64.exp()).exp() / 2.0 * 1.01);
    c.le("max |P - quadrature oracle|", gap, 1e-5);
    Ok(c)
}

fn scalar_inequality() -> Res<Checks> {
    let m = scalar_model()?;
    let decay = scalar_decay(&m)?;
    let q = DMatrix::identity(1, 1);
    let along = GramianMetric::new(&m, q.clone(), decay.clone(), 1e-10)?;
    let rescaled = RescaledMetric::new(&m, q, decay, 1e-10)?;
    let (mut worst, mut worst_rescaled) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for e in GRID {
        worst = worst.max(lie_derivative_residual(&along, &m, &[e], 1e-4, 1e-4)?.max_eig);
        worst_rescaled = worst_rescaled.max(lie_derivative_residual(&rescaled, &m, &[e], 1e-4, 1e-4)?.max_eig);
    }
    let mut points: Vec<f64> = GRID.to_vec();
    points.extend(in_box(&[-2.0], &[2.0], 16, 7).into_iter().map(|v| v[0]));
    let mut lowest = f64::INFINITY;
    for e in points {
        lowest = lowest.min(rescaled.eval(&[e])?[(0, 0)]);
    }
    let mut c = Checks::default();
    c.le("max eig L_F P + Q", worst, 1e-4);
    c.le("max eig rescaled L_F P + (1 + |J|^3) Q", worst_rescaled, 1e-4);
    c.ge("min rescaled P on 21 samples", lowest, rescaled.lower_bound() - 1e-6);
    Ok(c)
}

fn riemannian_v() -> Res<Checks> {
    let mut c = Checks::default();
    let geo = GeometryOptions::default();

    let mut rng = TestRunner::deterministic();
    let mut worst_const = 0.0f64;
    for n in [1usize, 2, 3] {
        let b = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -1.0, 1.0));
        let p = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let metric = ConstantMetric::new(p.clone(), DMatrix::identity(n, n))?;
        for _ in 0..3 {
            let e = nalgebra::DVector::from_fn(n, |_, _| uniform(&mut rng, -2.0, 2.0));
            let v = distance_to_origin(&metric, e.as_slice(), &geo)?.value;
            worst_const = worst_const.max((v - e.dot(&(&p * &e)).sqrt()).abs());
        }
    }
    c.le("max |d_P(e,0) - sqrt(e'Pe)| on constant metrics", worst_const, 1e-8);

    let m = scalar_model()?;
    let opts = EstimateOptions::default();
    let les = estimate_les(&m, RADII[0], 8, 20.0, &opts)?;
    let gain = estimate_gain_function(&m, &les, &RADII, 8, 20.0, &opts)?;
    let lin = scalar_decay(&m)?;
    let metric = GramianMetric::new(&m, DMatrix::identity(1, 1), lin.clone(), 1e-10)?;
    let env = Envelope::from_bounds(&metric_bounds(&metric, &m, &RADII, &gain, &lin, 6, 0)?);
    let mut worst = 0.0f64;
    let (mut unflagged, mut sandwiched) = (0, 0);
    for e in GRID {
        let v = distance_to_origin(&metric, &[e], &geo)?;
        worst = worst.max((v.value - scalar_example_distance(e, 1.0)).abs());
        if !v.upper_bound {
            unflagged += 1;
            if env.sandwich(e.abs(), e.abs(), v.value) == Some(true) {
                sandwiched += 1;
            }
        }
    }
    c.le("max |V - quadrature oracle|", worst, 1e-5);
    c.add(
        unflagged > 0 && sandwiched == unflagged,
        format!("sandwich holds at {sandwiched}/{unflagged} unflagged points"),
    );
    for e in [0.5, 1.0, 2.0] {
        let d = dini_derivative_v(&metric, &m, &[e], &DINI_STEPS, Some(&env), &geo)?;
        let bound = d.bound.ok_or("no envelope bound")?;
        c.add(
            d.satisfies(1e-3) == Some(true),
            format!("D+V({e}) = {:.4e} <= {:.4e} + 1e-3", d.value, bound),
        );
    }
    Ok(c)
}

fn counterexample(lam: f64) -> Res<TransverseModel> {
    let spec = SystemSpec::parse_with(
        &transverse_counterexample().spec,
        &[("lam".into(), lam), ("mu".into(), 1.0)],
    )?;
    Ok(TransverseModel::from_spec(&spec)?)
}

fn transverse_counterexample_run() -> Res<Checks> {
    let mut c = Checks::default();
    // x grows like e^t, so sin(x) oscillates thousands of times by t = 10;
    // 1e-8 keeps the run inside budget with wide margins on every check.
    let opts = FlowOptions::new(1e-8);
    for lam in [0.5, 2.0] {
        let full = counterexample(lam)?.full_system();
        let tr = variational_flow(&full, &[1.0, 1.0], 10.0, &opts)?;
        // δE = Φ_ee δe0 + Φ_ex δx0 with δx0 = 1 and δe0 in {0, 1}.
        for de0 in [0.0, 1.0] {
            let delta = |phi: DMatrix<f64>| (phi[(0, 0)] * de0 + phi[(0, 1)]).abs();
            let start = delta(tr.phi(0).ok_or("missing transition matrix")?);
            let sup = (0..tr.len()).map(|i| delta(tr.phi(i).unwrap())).fold(0.0f64, f64::max);
            let end = delta(tr.final_phi().ok_or("missing transition matrix")?);
            if lam == 0.5 {
                c.ge(&format!("lam 0.5, de0 {de0}: sup |dE|"), sup, start + 0.5);
            } else {
                c.le(&format!("lam 2, de0 {de0}: |dE(10)|"), end, 1e-2);
            }
        }
        let k = (1f64.cos() + 1.0).exp();
        let mut worst = f64::NEG_INFINITY;
        for e0 in [-1.0, -0.5, -0.1, 0.25, 0.75, 1.0] {
            let tr = flow(&full, &[e0, 1.0], 10.0, &opts)?;
            for i in 0..tr.len() {
                let t = tr.times()[i];
                let ratio = tr.state(i)[0].abs() / (k * (-lam * t).exp() * f64::abs(e0));
                worst = worst.max(ratio);
            }
        }
        c.le(&format!("lam {lam}: max |E| / (exp(cos 1 + 1) e^(-lam t) |e0|)"), worst, 1.0);
    }
    Ok(c)
}

fn stabilization() -> Res<Checks> {
    let mut c = Checks::default();
    let dir = tempfile::tempdir()?;
    let plant = data("scalar_plant.spec");
    let mut config = RunConfig::new(Command::Stabilize, plant.to_string_lossy());
    config.lambda_gain = 3.0;
    config.out = dir.path().join("stabilize");
    let report = execute(&config)?;
    c.add(report.verdict == Verdict::Pass, format!("stabilize verdict {:?}", report.verdict));
    let ctl = &report.result["controller"];
    let closed = ctl["closed_loop"].as_f64().ok_or("no closed-loop residual")?;
    // Q = 1, so L_F P is the residual minus one.
    let lf = closed - 1.0;
    c.add((lf + 4.0).abs() <= 1e-6 && lf <= -1.0, format!("closed-loop L_F P = {lf:.9} (expected -4 <= -1)"));
    c.le("Killing residual", ctl["killing"].as_f64().ok_or("no Killing residual")?, 1e-8);
    c.le("integrability residual", ctl["integrability"].as_f64().ok_or("no integrability residual")?, 1e-8);

    let spec = SystemSpec::parse(&fs::read_to_string(&plant)?)?;
    let sys = ControlSystem::from_spec(&spec)?;
    let metric = ConstantMetric::new(spec.p.clone().ok_or("plant has no P")?, DMatrix::identity(1, 1))?;
    let cl = ClosedLoop::new(&sys, &metric, 3.0);
    let mut gap = 0.0f64;
    for w in [-2.0, -0.5, 0.25, 1.0, 3.0] {
        gap = gap.max((cl.control(&[w])? + 3.0 * w).abs());
    }
    c.le("max |u(w) + 3w|", gap, 1e-10);

    let exported = config.out.join("closed_loop.spec");
    let mut certify = RunConfig::new(Command::Certify, exported.to_string_lossy());
    certify.out = dir.path().join("certify");
    let report = execute(&certify)?;
    c.add(report.verdict == Verdict::Pass, format!("certify on closed loop: {:?}", report.verdict));
    Ok(c)
}

fn properties() -> Res<Checks> {
    use proptest::test_runner::{Config, TestCaseError};

    let mut c = Checks::default();
    let runner = || TestRunner::new_with_rng(Config::with_cases(12), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let fail = |e: Box<dyn StdError>| TestCaseError::fail(e.to_string());

    let tol = 1e-10;
    let pendulum = parse_system("dim = 2; F1 = x2; F2 = -sin(x1) - x2")?;
    let opts = FlowOptions::new(tol);
    let worst = Cell::new(0.0f64);
    let out = runner().run(&((-1.0..1.0, -1.0..1.0), 0.2..2.0, 0.2..2.0), |((a, b), s, t)| {
        let go = || -> Res<f64> {
            let whole = variational_flow(&pendulum, &[a, b], s + t, &opts)?;
            let first = variational_flow(&pendulum, &[a, b], s, &opts)?;
            let second = variational_flow(&pendulum, first.final_state(), t, &opts)?;
            let state_gap = whole
                .final_state()
                .iter()
                .zip(second.final_state())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let cocycle = whole.final_phi().unwrap() - second.final_phi().unwrap() * first.final_phi().unwrap();
            Ok(state_gap.max(cocycle.amax()))
        };
        let gap = go().map_err(fail)?;
        worst.set(worst.get().max(gap));
        if gap > 10.0 * tol {
            return Err(TestCaseError::fail(format!("semigroup gap {gap:.3e}")));
        }
        Ok(())
    });
    c.add(out.is_ok(), format!("semigroup/cocycle gap {:.3e} <= {:.1e} ({out:?})", worst.get(), 10.0 * tol));

    let warped = FnMetric::new(2, |e: &[f64]| {
        let v = nalgebra::DVector::from_column_slice(e);
        DMatrix::identity(2, 2) * (1.0 + v.norm_squared()) + &v * v.transpose() * 0.5
    });
    let geo = GeometryOptions::default();
    let worst = Cell::new(0.0f64);
    let out = runner().run(&((-1.0..1.0, -1.0..1.0), 0.0..std::f64::consts::TAU), |((a, b), angle)| {
        let go = || -> Res<f64> {
            let v = unit_velocity(&warped, &[a, b], &[angle.cos(), angle.sin()])?;
            let g = geodesic_ivp(&warped, &[a, b], &v, 1.5, &geo)?;
            Ok(g.speeds.iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs())))
        };
        let gap = go().map_err(fail)?;
        worst.set(worst.get().max(gap));
        if gap > 1e-6 {
            return Err(TestCaseError::fail(format!("speed drift {gap:.3e}")));
        }
        Ok(())
    });
    c.add(out.is_ok(), format!("geodesic speed drift {:.3e} <= 1e-6 ({out:?})", worst.get()));

    let coupled = parse_system("dim = 2; F1 = -x1 + 0.5*x2^2; F2 = -2*x2 + x1*x2")?;
    let metric = GramianMetric::new(&coupled, DMatrix::identity(2, 2), DecayEstimate::constant(0.9, 1.5, 1.0), 1e-10)?;
    let worst = Cell::new(0.0f64);
    let out = runner().run(&(-0.5..0.5, -0.5..0.5), |(a, b)| {
        let p = metric.eval(&[a, b]).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let gap = (&p - p.transpose()).amax();
        worst.set(worst.get().max(gap));
        if gap > 1e-10 {
            return Err(TestCaseError::fail(format!("asymmetry {gap:.3e}")));
        }
        Ok(())
    });
    c.add(out.is_ok(), format!("metric asymmetry {:.3e} <= 1e-10 ({out:?})", worst.get()));

    let field = parse_system("dim = 3; F1 = sin(x1*x2) + exp(-x3^2); F2 = x1^3 - cos(x2)*x3; F3 = sqrt(2 + x1^2)*ln(3 + x2)")?;
    let worst = Cell::new(0.0f64);
    let out = runner().run(&(-1.0..1.0, -1.0..1.0, -1.0..1.0), |(a, b, d)| {
        let x = [a, b, d];
        let j = field.jacobian(&x).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let h = 1e-5;
        for col in 0..3 {
            let (mut hi, mut lo) = (x, x);
            hi[col] += h;
            lo[col] -= h;
            let (mut fh, mut fl) = ([0.0; 3], [0.0; 3]);
            field.eval(&hi, &mut fh).map_err(|e| TestCaseError::fail(e.to_string()))?;
            field.eval(&lo, &mut fl).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for row in 0..3 {
                let fd = (fh[row] - fl[row]) / (2.0 * h);
                let rel = (j[(row, col)] - fd).abs() / j[(row, col)].abs().max(1.0);
                worst.set(worst.get().max(rel));
                if rel > 1e-6 {
                    return Err(TestCaseError::fail(format!("J[{row},{col}] off by {rel:.3e}")));
                }
            }
        }
        Ok(())
    });
    c.add(out.is_ok(), format!("AD vs central difference {:.3e} <= 1e-6 relative ({out:?})", worst.get()));

    let dir = tempfile::tempdir()?;
    let mut config = RunConfig::new(Command::Analyze, "scalar-example");
    config.out = dir.path().to_path_buf();
    config.seed = 11;
    execute(&config)?;
    let first = fs::read(dir.path().join("report.json"))?;
    execute(&config)?;
    let second = fs::read(dir.path().join("report.json"))?;
    c.add(first == second, format!("report.json byte-identical across runs ({} bytes)", first.len()));
    Ok(c)
}

fn main() -> ExitCode {
    type Criterion = (u8, &'static str, u64, fn() -> Res<Checks>);
    let criteria: [Criterion; 8] = [
        (1, "linear Lyapunov equality", 1, linear_lyapunov),
        (2, "scalar example flow", 1, scalar_flow),
        (3, "scalar example metric bounds", 10, scalar_metric_bounds),
        (4, "Lyapunov inequality along solutions", 30, scalar_inequality),
        (5, "Riemannian distance as Lyapunov function", 30, riemannian_v),
        (6, "transverse counterexample", 10, transverse_counterexample_run),
        (7, "stabilization", 5, stabilization),
        (8, "property suites", 60, properties),
    ];
    let mut failed = 0;
    for (n, title, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_budget = elapsed < Duration::from_secs(budget);
        let (ok, lines) = match result {
            Ok(Checks(checks)) => (
                in_budget && checks.iter().all(|(ok, _)| *ok),
                checks
                    .into_iter()
                    .map(|(ok, text)| format!("{} {text}", if ok { "ok  " } else { "FAIL" }))
                    .collect(),
            ),
            Err(e) => (false, vec![format!("FAIL error: {e}")]),
        };
        println!(
            "criterion {n} {}: {title} ({:.2} s, budget {budget} s{})",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_budget { "" } else { ", exceeded" }
        );
        for line in lines {
            println!("    {line}");
        }
        if !ok {
            failed += 1;
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
