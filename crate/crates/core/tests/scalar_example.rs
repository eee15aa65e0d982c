use lyapcert::catalog::{scalar_example_distance, scalar_example_metric, scalar_example_oracle, scalar_example_transition};
use lyapcert::dynamics::{flow, variational_flow, FlowOptions, SystemModel};
use lyapcert::expr::parse_system;
use lyapcert::geometry::{
    contraction_check, dini_derivative_v, distance_to_origin, pairwise_distance, Envelope, GeometryOptions, DINI_STEPS,
};
use lyapcert::metric::{
    lie_derivative_residual, metric_bounds, GramianMetric, MetricField, RescaledMetric,
};
use lyapcert::stability::{
    estimate_gain_function, estimate_les, estimate_linearized_decay, DecayEstimate, EstimateOptions,
};
use nalgebra::DMatrix;

const GRID: [f64; 5] = [-2.0, -1.0, 0.5, 1.0, 2.0];

fn model() -> SystemModel {
    parse_system("dim=1; F1 = -x1/(1+x1^2)").unwrap()
}

fn linear_decay(m: &SystemModel) -> DecayEstimate {
    estimate_linearized_decay(m, &[0.5, 1.0, 2.0], 8, 20.0, &EstimateOptions::default()).unwrap()
}

#[test]
fn flow_matches_implicit_solution() {
    let m = model();
    let tr = flow(&m, &[1.0], 5.0, &FlowOptions::new(1e-10)).unwrap();
    for t in [0.5, 1.0, 2.0, 5.0] {
        let got = tr.state_at(t).unwrap()[0];
        assert!((got - scalar_example_oracle(1.0, t)).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn transition_matches_linearization() {
    let m = model();
    let tr = variational_flow(&m, &[1.0], 4.0, &FlowOptions::new(1e-10)).unwrap();
    for t in [0.5, 1.0, 2.0, 4.0] {
        let got = tr.phi_at(t).unwrap()[(0, 0)];
        assert!((got - scalar_example_transition(1.0, t)).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn gains() {
    let m = model();
    let opts = EstimateOptions::default();
    let les = estimate_les(&m, 0.5, 8, 20.0, &opts).unwrap();
    assert!(les.lambda >= 0.7, "{}", les.lambda);
    let gain = estimate_gain_function(&m, &les, &[0.5, 1.0, 2.0], 8, 20.0, &opts).unwrap();
    for p in &gain.gain_table {
        assert!(p.k <= (p.s * p.s / 2.0).exp() * 1.01, "k({}) = {}", p.s, p.k);
    }
    let lin = linear_decay(&m);
    assert!((lin.lambda - 1.0).abs() < 0.05, "{}", lin.lambda);
    for p in &lin.gain_table {
        let bound = (2.0 * p.s * p.s * (p.s * p.s).exp()).exp();
        assert!(p.k <= bound * 1.01, "k̃({}) = {}", p.s, p.k);
    }
    println!("les {les:?}\ngain {:?}\nlin {:?} {}", gain.gain_table, lin.gain_table, lin.lambda);
}

#[test]
fn metric_and_residuals() {
    let m = model();
    let lin = linear_decay(&m);
    let q = DMatrix::identity(1, 1);
    let metric = GramianMetric::new(&m, q.clone(), lin.clone(), 1e-10).unwrap();
    for e in GRID {
        let p = metric.eval(&[e]).unwrap()[(0, 0)];
        let oracle = scalar_example_metric(e, 1.0);
        println!("e = {e}: P = {p}, oracle = {oracle}, T = {:?}", metric.horizon(&[e]).unwrap());
        assert!(p >= 0.5 - 1e-6);
        assert!((p - oracle).abs() < 1e-5);
        let r = lie_derivative_residual(&metric, &m, &[e], 1e-4, 1e-4).unwrap();
        println!("   residual {} disagreement {}", r.max_eig, r.disagreement);
        assert!(r.max_eig <= 1e-4);
    }
    let p1 = metric.eval(&[1.0]).unwrap()[(0, 0)];
    assert!(p1 <= (4.0 * 1f64.exp()).exp() / 2.0 * 1.01);

    let rescaled = RescaledMetric::new(&m, q, lin, 1e-10).unwrap();
    for e in GRID {
        let p = rescaled.eval(&[e]).unwrap()[(0, 0)];
        let r = lie_derivative_residual(&rescaled, &m, &[e], 1e-4, 1e-4).unwrap();
        println!("rescaled e = {e}: P = {p}, residual {}", r.max_eig);
        assert!(p >= 0.5 - 1e-6);
        assert!(r.max_eig <= 1e-4);
    }
    let p0 = rescaled.eval(&[0.0]).unwrap()[(0, 0)];
    assert!((p0 - 1.0).abs() < 1e-8);
}

#[test]
fn bounds_table() {
    let m = model();
    let opts = EstimateOptions::default();
    let les = estimate_les(&m, 0.5, 8, 20.0, &opts).unwrap();
    let radii = [0.5, 1.0, 2.0];
    let gain = estimate_gain_function(&m, &les, &radii, 8, 20.0, &opts).unwrap();
    let lin = linear_decay(&m);
    let metric = GramianMetric::new(&m, DMatrix::identity(1, 1), lin.clone(), 1e-10).unwrap();
    let b = metric_bounds(&metric, &m, &radii, &gain, &lin, 6, 0).unwrap();
    println!("{}", serde_json::to_string_pretty(&b).unwrap());
    assert_eq!(b.completeness.unwrap().verdict, "pass");
    for r in &b.rows {
        assert!((r.analytic_lower - 0.5).abs() < 1e-9);
    }
}

#[test]
fn distance_sandwich_and_dini() {
    let m = model();
    let opts = EstimateOptions::default();
    let les = estimate_les(&m, 0.5, 8, 20.0, &opts).unwrap();
    let radii = [0.5, 1.0, 2.0];
    let gain = estimate_gain_function(&m, &les, &radii, 8, 20.0, &opts).unwrap();
    let lin = linear_decay(&m);
    let metric = GramianMetric::new(&m, DMatrix::identity(1, 1), lin.clone(), 1e-10).unwrap();
    let env = Envelope::from_bounds(&metric_bounds(&metric, &m, &radii, &gain, &lin, 6, 0).unwrap());
    let geo = GeometryOptions::default();
    for e in GRID {
        let v = distance_to_origin(&metric, &[e], &geo).unwrap();
        let oracle = scalar_example_distance(e, 1.0);
        assert!(!v.upper_bound);
        assert!((v.value - oracle).abs() < 1e-5, "V({e}) = {} vs {oracle}", v.value);
        assert_eq!(env.sandwich(e.abs(), e.abs(), v.value), Some(true), "e = {e}");
    }
    for e in [0.5, 1.0, 2.0] {
        let d = dini_derivative_v(&metric, &m, &[e], &DINI_STEPS, Some(&env), &geo).unwrap();
        println!("e = {e}: D+V = {} bound {:?}", d.value, d.bound);
        assert!(d.value < 0.0);
        assert_eq!(d.satisfies(1e-3), Some(true));
    }
}

#[test]
fn pairwise_distance_contracts() {
    let m = model();
    let lin = linear_decay(&m);
    let metric = GramianMetric::new(&m, DMatrix::identity(1, 1), lin, 1e-10).unwrap();
    let geo = GeometryOptions::default();
    let (t1, t2) = (
        flow(&m, &[1.0], 2.0, &FlowOptions::new(1e-11)).unwrap(),
        flow(&m, &[0.5], 2.0, &FlowOptions::new(1e-11)).unwrap(),
    );
    let mut last = f64::INFINITY;
    for k in 0..=8 {
        let t = 0.25 * k as f64;
        let (a, b) = (t1.state_at(t).unwrap(), t2.state_at(t).unwrap());
        let d = pairwise_distance(&metric, &a, &b, &geo).unwrap().value;
        assert!(d < last, "t = {t}: {d} >= {last}");
        last = d;
    }
    let check = contraction_check(&metric, &m, &[1.0], &[0.5], 1e-3, None, &geo).unwrap();
    assert!(check.contracting());
}
