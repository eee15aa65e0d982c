use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricField, TransverseMetric, Variant};
use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, sym_eigenvalues};
use crate::sampling;
use crate::stability::{jacobian_norm_sup, DecayEstimate};

/// Samples used for each Jacobian-norm majorant.
const JACOBIAN_SAMPLES: usize = 256;

/// Eigenvalue envelopes of `P` on one shell of the radii grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub s: f64,
    pub empirical_min: f64,
    pub empirical_max: f64,
    pub analytic_lower: f64,
    pub analytic_upper: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completeness {
    /// `p̲(r) r²` on the radii grid.
    pub values: Vec<f64>,
    /// "pass" when the values are nondecreasing and grow at least tenfold
    /// across the grid, otherwise "flag".
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    pub rows: Vec<BoundRow>,
    pub completeness: Option<Completeness>,
    /// Every evaluated point with its matrix.
    #[serde(skip)]
    pub evaluations: Vec<(Vec<f64>, DMatrix<f64>)>,
}

/// Growth check of `p̲(r) r²` on a finite grid.
pub fn completeness(radii: &[f64], lower: &[f64]) -> Completeness {
    let values: Vec<f64> = radii.iter().zip(lower).map(|(r, p)| p * r * r).collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    let grows = match (values.first(), values.last()) {
        (Some(a), Some(b)) => *b >= 10.0 * *a,
        _ => false,
    };
    Completeness {
        verdict: if monotone && grows { "pass" } else { "flag" }.into(),
        values,
    }
}

fn eigen_range(values: &[DMatrix<f64>]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let ev = sym_eigenvalues(p);
        (lo.min(ev[0]), hi.max(*ev.last().unwrap()))
    })
}

fn check_rows(rows: &[BoundRow]) -> Result<()> {
    for r in rows {
        let lower_ok = r.empirical_min >= r.analytic_lower * (1.0 - 1e-6) - 1e-8;
        let upper_ok = r.empirical_max <= r.analytic_upper * (1.0 + 1e-6) + 1e-8;
        if !(lower_ok && upper_ok) {
            return Err(Error::BoundViolation(format!(
                "at radius {}: eigenvalues [{:.6e}, {:.6e}] outside analytic [{:.6e}, {:.6e}]",
                r.s, r.empirical_min, r.empirical_max, r.analytic_lower, r.analytic_upper
            )));
        }
    }
    Ok(())
}

/// Empirical and analytic eigenvalue envelopes of `P` over shells of the
/// radii grid.
///
/// `gain` bounds the solutions (`k(s)`), `linear` the transition matrices
/// (`k̃(s), λ̃`). The analytic envelopes are
/// `p̲(s) = μ_min(Q) / (2 c(k(s) s))` with `c(r) = sup_{|e|<=r} |∂F/∂e|`
/// and `p̄(s) = k̃(s)² μ_max(Q) / (2 λ̃)`. For the rescaled variant the lower
/// envelope is `μ_min(Q)/2` and the upper one carries `1 + c³`.
#[allow(clippy::too_many_arguments)]
pub fn metric_bounds<M, V>(
    metric: &M,
    model: &V,
    radii: &[f64],
    gain: &DecayEstimate,
    linear: &DecayEstimate,
    n_per_radius: usize,
    seed: u64,
) -> Result<MetricBounds>
where
    M: MetricField + ?Sized,
    V: VectorField + ?Sized,
{
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::InvalidArgument("radii must be positive and strictly increasing".into()));
    }
    let q = metric.q();
    let (q_min, q_max) = (min_eigenvalue(q), max_eigenvalue(q));
    let mut rows = Vec::with_capacity(radii.len());
    let mut evaluations = Vec::new();
    for (j, &s) in radii.iter().enumerate() {
        let inner = if j == 0 { 0.0 } else { radii[j - 1] };
        let points = sampling::shell(metric.point_dim(), inner, s, n_per_radius, seed.wrapping_add(j as u64));
        let values: Vec<DMatrix<f64>> = points
            .par_iter()
            .map(|e| metric.eval(e))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_>>()?;
        let (lo, hi) = eigen_range(&values);
        let missing = |what: &str| Error::DecayDataInsufficient(format!("no {what} gain at radius {s}"));
        let (analytic_lower, analytic_upper) = match metric.variant() {
            Variant::Origin => {
                let p = metric.eval(&vec![0.0; metric.point_dim()])?;
                (min_eigenvalue(&p), max_eigenvalue(&p))
            }
            variant => {
                let k = gain.gain(s).ok_or_else(|| missing("solution"))?;
                let kt = linear.gain(s).ok_or_else(|| missing("linearized"))?;
                let c = jacobian_norm_sup(model, k * s, JACOBIAN_SAMPLES, seed)?;
                let upper = kt * kt * q_max / (2.0 * linear.lambda);
                if variant == Variant::Rescaled {
                    (q_min / 2.0, upper * (1.0 + c.powi(3)))
                } else {
                    (q_min / (2.0 * c), upper)
                }
            }
        };
        rows.push(BoundRow {
            s,
            empirical_min: lo,
            empirical_max: hi,
            analytic_lower,
            analytic_upper,
            samples: points.len(),
        });
        evaluations.extend(points.into_iter().zip(values));
    }
    check_rows(&rows)?;
    let lower: Vec<f64> = rows.iter().map(|r| r.analytic_lower).collect();
    Ok(MetricBounds {
        completeness: Some(completeness(radii, &lower)),
        rows,
        evaluations,
    })
}

/// Uniform envelopes of the transverse metric over an `x` box:
/// `p̲ = μ_min(Q) / (2μ)` with `μ = sup_x |∂F/∂e(0,x)|`, and
/// `p̄ = k̃² μ_max(Q) / (2λ̃)`.
pub fn transverse_bounds(
    metric: &TransverseMetric,
    x_lo: &[f64],
    x_hi: &[f64],
    n_samples: usize,
    seed: u64,
    mu: f64,
) -> Result<MetricBounds> {
    let q = metric.q();
    let decay = metric.decay();
    let kt = decay
        .gain(0.0)
        .ok_or_else(|| Error::DecayDataInsufficient("no transverse gain".into()))?;
    let points = sampling::in_box(x_lo, x_hi, n_samples, seed);
    let values: Vec<DMatrix<f64>> = points
        .par_iter()
        .map(|x| metric.eval(x))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let (lo, hi) = eigen_range(&values);
    let half_diag = x_lo
        .iter()
        .zip(x_hi)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt()
        / 2.0;
    let rows = vec![BoundRow {
        s: half_diag,
        empirical_min: lo,
        empirical_max: hi,
        analytic_lower: min_eigenvalue(q) / (2.0 * mu),
        analytic_upper: kt * kt * max_eigenvalue(q) / (2.0 * decay.lambda),
        samples: points.len(),
    }];
    check_rows(&rows)?;
    Ok(MetricBounds {
        rows,
        completeness: None,
        evaluations: points.into_iter().zip(values).collect(),
    })
}
