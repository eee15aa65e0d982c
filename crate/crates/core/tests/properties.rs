use std::sync::OnceLock;

use lyapcert::catalog::{scalar_example, scalar_example_oracle, transverse_counterexample};
use lyapcert::dynamics::{flow, variational_flow, FlowOptions, LinearSystem, SystemModel, TransverseModel, VectorField};
use lyapcert::expr::{eval_jet2, parse_system, SystemSpec};
use lyapcert::geometry::{distance_to_origin, geodesic_ivp, pairwise_distance, unit_velocity, GeometryOptions};
use lyapcert::metric::{ConstantMetric, FnMetric, GramianMetric, MetricField};
use lyapcert::stability::{estimate_les, estimate_linearized_decay, DecayEstimate, EstimateOptions};
use lyapcert::stabilization::{ClosedLoop, ControlSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn pendulum() -> SystemModel {
    parse_system("dim = 2; F1 = x2; F2 = -sin(x1) - x2").unwrap()
}

fn scalar() -> SystemModel {
    SystemModel::from_exprs(SystemSpec::parse(&scalar_example().spec).unwrap().f).unwrap()
}

fn counterexample_full() -> SystemModel {
    let spec = SystemSpec::parse(&transverse_counterexample().spec).unwrap();
    TransverseModel::from_spec(&spec).unwrap().full_system()
}

fn scalar_decay() -> &'static DecayEstimate {
    static DECAY: OnceLock<DecayEstimate> = OnceLock::new();
    DECAY.get_or_init(|| {
        estimate_linearized_decay(&scalar(), &[0.5, 1.0, 2.0], 8, 20.0, &EstimateOptions::default()).unwrap()
    })
}

fn scalar_metric() -> GramianMetric<SystemModel> {
    GramianMetric::new(scalar(), DMatrix::identity(1, 1), scalar_decay().clone(), TOL).unwrap()
}

/// `P(e) = (1 + |e|²) I + e eᵀ / 2`.
fn warped() -> FnMetric<impl Fn(&[f64]) -> DMatrix<f64>> {
    FnMetric::new(2, |e: &[f64]| {
        let v = DVector::from_column_slice(e);
        DMatrix::identity(2, 2) * (1.0 + v.norm_squared()) + &v * v.transpose() * 0.5
    })
}

fn point(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jet_gradient_matches_central_differences(x in point(2, 2.0)) {
        for model in [counterexample_full(), pendulum()] {
            let jets = eval_jet2(&model, &x).unwrap();
            let h = 1e-5;
            for (i, jet) in jets.iter().enumerate() {
                for k in 0..2 {
                    let (mut hi, mut lo) = (x.clone(), x.clone());
                    hi[k] += h;
                    lo[k] -= h;
                    let fd = (model.eval_vec(&hi).unwrap()[i] - model.eval_vec(&lo).unwrap()[i]) / (2.0 * h);
                    let rel = (jet.grad[k] - fd).abs() / jet.grad[k].abs().max(1.0);
                    prop_assert!(rel <= 1e-6, "component {i}, direction {k}: {rel:e}");
                }
                for a in 0..2 {
                    for b in 0..2 {
                        prop_assert_eq!(jet.hess_at(a, b), jet.hess_at(b, a));
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_agrees_with_jets(x in point(2, 3.0)) {
        let model = counterexample_full();
        let j = model.jacobian(&x).unwrap();
        for (i, jet) in eval_jet2(&model, &x).unwrap().iter().enumerate() {
            for k in 0..2 {
                prop_assert!((j[(i, k)] - jet.grad[k]).abs() <= 1e-14 * (1.0 + j[(i, k)].abs()));
            }
        }
    }

    #[test]
    fn printed_spec_reparses_to_the_same_system(x in point(2, 3.0)) {
        let spec = SystemSpec::parse(&transverse_counterexample().spec).unwrap();
        let again = SystemSpec::parse(&spec.to_string()).unwrap();
        prop_assert_eq!(spec.f[0].eval(&x).unwrap(), again.f[0].eval(&x).unwrap());
        prop_assert_eq!(spec.g_manifold[0].eval(&x).unwrap(), again.g_manifold[0].eval(&x).unwrap());
    }

    #[test]
    fn manifold_is_invariant(x in -5.0..5.0f64) {
        let spec = SystemSpec::parse(&transverse_counterexample().spec).unwrap();
        let model = TransverseModel::from_spec(&spec).unwrap();
        prop_assert!(model.invariance_defect(&[vec![x]]).unwrap() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn semigroup_and_cocycle(e in point(2, 1.0), s in 0.1..2.0f64, t in 0.1..2.0f64) {
        let m = pendulum();
        let opts = FlowOptions::new(TOL);
        let whole = variational_flow(&m, &e, s + t, &opts).unwrap();
        let first = variational_flow(&m, &e, s, &opts).unwrap();
        let second = variational_flow(&m, first.final_state(), t, &opts).unwrap();
        for (a, b) in whole.final_state().iter().zip(second.final_state()) {
            prop_assert!((a - b).abs() <= 10.0 * TOL, "{a} vs {b}");
        }
        let gap = (whole.final_phi().unwrap() - second.final_phi().unwrap() * first.final_phi().unwrap()).amax();
        prop_assert!(gap <= 10.0 * TOL, "cocycle gap {gap:e}");
        prop_assert_eq!(whole.phi(0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn variation_is_linear_in_the_perturbation(e in point(2, 1.0), d in point(2, 1.0), alpha in -3.0..3.0f64) {
        let tr = variational_flow(&pendulum(), &e, 2.0, &FlowOptions::new(TOL)).unwrap();
        let phi = tr.final_phi().unwrap();
        let d = DVector::from_vec(d);
        let scaled = &phi * (&d * alpha);
        let expected = (&phi * &d) * alpha;
        prop_assert!((scaled - &expected).amax() <= 1e-14 * (1.0 + expected.amax()));
    }

    #[test]
    fn dense_output_matches_direct_integration(e in point(2, 1.0), t in 0.05..3.0f64) {
        let m = pendulum();
        let opts = FlowOptions::new(TOL);
        let long = flow(&m, &e, 3.0, &opts).unwrap();
        let direct = flow(&m, &e, t, &opts).unwrap();
        let interpolated = long.state_at(t).unwrap();
        for (a, b) in interpolated.iter().zip(direct.final_state()) {
            prop_assert!((a - b).abs() <= 10.0 * TOL, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_rate_is_close_to_the_spectral_abscissa(a11 in -3.0..-0.5f64, a12 in -1.0..1.0f64, a22 in -3.0..-0.5f64) {
        let a = DMatrix::from_row_slice(2, 2, &[a11, a12, 0.0, a22]);
        let slowest = a11.max(a22).abs();
        let les = estimate_les(&LinearSystem::new(a).unwrap(), 0.5, 6, 20.0 / slowest * 2.0, &EstimateOptions::default()).unwrap();
        prop_assert!((les.lambda - slowest).abs() <= 0.1 * slowest, "{} vs {slowest}", les.lambda);
    }

    #[test]
    fn geodesics_keep_unit_speed(e in point(2, 1.0), angle in 0.0..std::f64::consts::TAU) {
        let m = warped();
        let v = unit_velocity(&m, &e, &[angle.cos(), angle.sin()]).unwrap();
        let g = geodesic_ivp(&m, &e, &v, 1.5, &GeometryOptions::default()).unwrap();
        prop_assert!(g.normalized);
        for s in &g.speeds {
            prop_assert!((s - 1.0).abs() <= 1e-6, "{s}");
        }
        prop_assert!((g.length - 1.5).abs() <= 1e-6);
    }

    #[test]
    fn triangle_inequality(a in point(2, 1.0), b in point(2, 1.0), c in point(2, 1.0)) {
        let m = warped();
        let geo = GeometryOptions::default();
        let d = |p: &[f64], q: &[f64]| pairwise_distance(&m, p, q, &geo).unwrap().value;
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-5);
    }

    #[test]
    fn constant_metric_distance_is_the_quadratic_form(e in point(3, 2.0), shear in -0.9..0.9f64) {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, shear, 0.0, shear, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let m = ConstantMetric::new(p.clone(), DMatrix::identity(3, 3)).unwrap();
        let v = distance_to_origin(&m, &e, &GeometryOptions::default()).unwrap();
        let ev = DVector::from_vec(e);
        prop_assert!((v.value - ev.dot(&(&p * &ev)).sqrt()).abs() <= 1e-8);
    }

    #[test]
    fn potential_vanishes_at_the_origin_and_zero_gain_is_the_drift(w in point(2, 2.0)) {
        let spec = SystemSpec::parse("dim = 2; F1 = -x1 + x2; F2 = -x1 - x2; g1 = 1; g2 = 0").unwrap();
        let sys = ControlSystem::from_spec(&spec).unwrap();
        let metric = ConstantMetric::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let cl = ClosedLoop::new(&sys, &metric, 2.0);
        prop_assert_eq!(cl.potential(&[0.0, 0.0]).unwrap(), 0.0);
        let free = ClosedLoop::new(&sys, &metric, 0.0);
        let (f, drift) = (free.eval_vec(&w).unwrap(), sys.drift.eval_vec(&w).unwrap());
        prop_assert_eq!(f, drift);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gramian_metric_is_symmetric_and_bounded_below(e in -2.0..2.0f64) {
        let p = scalar_metric().eval(&[e]).unwrap();
        prop_assert!((&p - p.transpose()).amax() <= 1e-10);
        prop_assert!(p[(0, 0)] >= 0.5 - 1e-6);
    }

    #[test]
    fn longer_truncation_moves_p_by_less_than_the_tail_bound(e in -2.0..2.0f64) {
        let m = scalar_metric();
        let t = m.horizon(&[e]).unwrap().unwrap();
        let short = m.eval_truncated(&[e], Some(t)).unwrap();
        let long = m.eval_truncated(&[e], Some(t + 5.0)).unwrap();
        prop_assert!((long - short).amax() <= m.tail_bound(&[e], t).unwrap() + 1e-10);
    }

    #[test]
    fn metric_transported_by_the_flow(e in -2.0..2.0f64, h in 0.01..0.1f64) {
        let m = scalar_metric();
        let t = m.horizon(&[e]).unwrap().unwrap();
        let lifted = m.lifted_trajectory(&[e], t + h).unwrap();
        let inv = lifted.phi_at(h).unwrap().try_inverse().unwrap();
        let gram = |v: Vec<f64>| DMatrix::from_column_slice(1, 1, &v);
        let shifted = gram(lifted.aux(lifted.len() - 1).to_vec()) - gram(lifted.aux_at(h).unwrap());
        let transported = inv.transpose() * shifted * &inv;
        let moved = lifted.state_at(h).unwrap();
        let direct = m.eval_truncated(&moved, Some(t)).unwrap();
        prop_assert!((direct - transported).amax() <= 1e-5);
    }

    #[test]
    fn lifted_quadratic_form_decreases_at_rate_q(e in -2.0..2.0f64, d in 0.5..2.0f64) {
        let m = scalar_metric();
        let model = scalar();
        let opts = FlowOptions::new(1e-12);
        let form = |h: f64| -> f64 {
            let tr = variational_flow(&model, &[e], h, &opts).unwrap();
            let delta = tr.final_phi().unwrap()[(0, 0)] * d;
            delta * m.eval(tr.final_state()).unwrap()[(0, 0)] * delta
        };
        let v0 = form(0.0);
        let (h, q1, q2) = (1e-3, (form(1e-3) - v0) / 1e-3, (form(5e-4) - v0) / 5e-4);
        let rate = 2.0 * q2 - q1;
        let expected = -d * d;
        prop_assert!((rate - expected).abs() <= 1e-4 * expected.abs(), "{rate} vs {expected} (h = {h})");
    }
}

#[test]
fn les_envelope_replays_on_its_samples() {
    let m = scalar();
    let opts = EstimateOptions::default();
    let les = estimate_les(&m, 0.5, 8, 20.0, &opts).unwrap();
    assert!(les.lambda > 0.0);
    for e0 in &les.samples.points {
        let s = e0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tr = flow(&m, e0, les.samples.horizon, &opts.flow).unwrap();
        for i in 0..tr.len() {
            let norm = tr.state(i)[0].abs();
            assert!(les.admits(s, tr.times()[i], norm, 1e-9), "e0 = {e0:?} at t = {}", tr.times()[i]);
        }
    }
}

#[test]
fn gain_grows_with_the_sample_set() {
    let m = scalar();
    let opts = EstimateOptions::default();
    let radii = [0.5, 1.0, 2.0];
    let small = estimate_linearized_decay(&m, &radii, 4, 20.0, &opts).unwrap();
    let large = estimate_linearized_decay(&m, &radii, 8, 20.0, &opts).unwrap();
    for table in [&small.gain_table, &large.gain_table] {
        assert!(table.windows(2).all(|w| w[1].k >= w[0].k));
    }
    if small.lambda == large.lambda {
        for (a, b) in small.gain_table.iter().zip(&large.gain_table) {
            assert!(b.k >= a.k, "k({}) shrank from {} to {}", a.s, a.k, b.k);
        }
    }
}

#[test]
fn oracle_error_shrinks_with_tolerance() {
    let m = scalar();
    let errors: Vec<f64> = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
        .iter()
        .map(|&tol| {
            let tr = flow(&m, &[1.5], 5.0, &FlowOptions::new(tol)).unwrap();
            (tr.final_state()[0] - scalar_example_oracle(1.5, 5.0)).abs()
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}
