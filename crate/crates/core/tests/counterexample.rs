use lyapcert::catalog::{counterexample_oracle, transverse_counterexample};
use lyapcert::dynamics::{transverse_flow, variational_flow, FlowOptions, TransverseModel};
use lyapcert::error::Error;
use lyapcert::expr::SystemSpec;
use lyapcert::stability::{
    estimate_bound_constants, estimate_transverse_linear_decay, estimate_transverse_variation, estimate_tules,
    EstimateOptions,
};

fn model(lam: f64, mu: f64) -> TransverseModel {
    let entry = transverse_counterexample();
    let spec = SystemSpec::parse_with(&entry.spec, &[("lam".into(), lam), ("mu".into(), mu)]).unwrap();
    TransverseModel::from_spec(&spec).unwrap()
}

fn opts() -> EstimateOptions {
    EstimateOptions {
        seed: 3,
        flow: FlowOptions::new(1e-10),
    }
}

#[test]
fn coupled_flow_matches_closed_form() {
    let m = model(0.5, 1.0);
    let tr = transverse_flow(&m, &[1.0], &[1.0], 4.0, &FlowOptions::new(1e-11)).unwrap();
    for t in [0.5, 1.0, 2.0, 4.0] {
        let z = tr.coupled.state_at(t).unwrap();
        let exact = counterexample_oracle(1.0, 1.0, t, 0.5, 1.0, 0.0, 0.0);
        assert!((z[0] - exact.e).abs() <= 1e-6 * (1.0 + exact.e.abs()), "t={t}: {} vs {}", z[0], exact.e);
        assert!((z[1] - exact.x).abs() <= 1e-6 * exact.x);
    }
}

#[test]
fn variation_matches_closed_form() {
    let m = model(0.5, 1.0);
    let tr = variational_flow(&m.full_system(), &[1.0, 1.0], 6.0, &FlowOptions::new(1e-11)).unwrap();
    for t in [1.0, 3.0, 6.0] {
        let phi = tr.phi_at(t).unwrap();
        let exact = counterexample_oracle(1.0, 1.0, t, 0.5, 1.0, 0.0, 1.0);
        assert!((phi[(0, 1)] - exact.de).abs() <= 1e-6 * (1.0 + exact.de.abs()), "t={t}");
        assert!((phi[(1, 1)] - exact.dx).abs() <= 1e-6 * exact.dx);
    }
}

#[test]
fn frozen_transverse_flows_decay_for_both_gains() {
    for lam in [0.5, 2.0] {
        let m = model(lam, 1.0);
        let est = estimate_transverse_linear_decay(&m, &[0.5], &[1.5], 4, 8.0, &opts()).unwrap();
        assert!(est.lambda > 0.0);
        let tules = estimate_tules(&m, 0.5, &[0.5], &[1.5], 4, 8.0, &opts()).unwrap();
        assert!(tules.lambda > 0.0);
    }
}

#[test]
fn coupled_variation_separates_the_gains() {
    let slow = estimate_transverse_variation(&model(0.5, 1.0), 1.0, &[0.5], &[1.5], 4, 10.0, &opts());
    match slow {
        Err(Error::LinearizedDecayFalsified { witness, .. }) => assert_eq!(witness.len(), 2),
        other => panic!("expected a falsification, got {other:?}"),
    }
    let fast = estimate_transverse_variation(&model(2.0, 1.0), 1.0, &[0.5], &[1.5], 4, 10.0, &opts()).unwrap();
    assert!(fast.lambda > 0.5, "{}", fast.lambda);
}

#[test]
fn mu_matches_grid_search() {
    let lam = 0.5;
    let b = 3.0;
    let m = model(lam, 1.0);
    let bounds = estimate_bound_constants(&m, 0.5, &[-b], &[b], 64, 0).unwrap();
    // The estimator's sample points are reproduced and searched directly.
    let xs = lyapcert::sampling::in_box(&[-b], &[b], 64, 0);
    let grid = xs.iter().map(|x| (lam + x[0] * x[0].sin()).abs()).fold(0.0, f64::max);
    assert!((bounds.mu.value - grid).abs() < 1e-12);
    let fine = (0..=60_000)
        .map(|k| -b + 2.0 * b * k as f64 / 60_000.0)
        .map(|x| (lam + x * x.sin()).abs())
        .fold(0.0, f64::max);
    assert!(bounds.mu.value <= fine + 1e-12 && bounds.mu.value > 0.9 * fine);
    assert!((bounds.rho.value - 1.0).abs() < 1e-12);
}
