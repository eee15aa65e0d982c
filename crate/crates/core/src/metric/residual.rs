use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{rows, MetricField, TransverseMetric, Variant};
use crate::dynamics::{flow_signed, FlowOptions, VectorField};
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, spectral_norm, symmetrize};

/// One evaluation of `R(e) = d_F P(e) + P A + Aᵀ P + W`, where `A` is the
/// Jacobian driving the metric and `W` the required decrease (`Q` or a
/// weighted `Q`). The inequality holds at `e` when `R(e) ⪯ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub point: Vec<f64>,
    pub residual: Vec<Vec<f64>>,
    pub max_eig: f64,
    /// Step of the one-sided flow difference before extrapolation.
    pub h: f64,
    /// Gap between the `h` and `h/2` difference quotients.
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
    pub max_eig: f64,
    pub tolerance: f64,
    pub verdict: String,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

/// Collect entries; the verdict is "pass" iff every max eigenvalue is at
/// most `tolerance`.
pub fn residual_report(entries: Vec<ResidualEntry>, tolerance: f64) -> ResidualReport {
    let max_eig = entries.iter().map(|e| e.max_eig).fold(f64::NEG_INFINITY, f64::max);
    let pass = entries.iter().all(|e| e.max_eig <= tolerance);
    ResidualReport {
        entries,
        max_eig,
        tolerance,
        verdict: if pass { "pass" } else { "fail" }.into(),
    }
}

/// Flow-aligned derivative `lim (P(X(e,h)) - P(e)) / h` with one Richardson
/// step over `h, h/2`. All three evaluations share one truncation horizon.
pub(crate) fn flow_derivative<M, D>(
    metric: &M,
    driver: &D,
    e: &[f64],
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)>
where
    M: MetricField + ?Sized,
    D: VectorField + ?Sized,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("difference step must be positive".into()));
    }
    let horizon = metric.horizon(e)?;
    let opts = FlowOptions::new(1e-13);
    let at = |dt: f64| -> Result<DMatrix<f64>> {
        let x = flow_signed(driver, e, dt, &opts)?.final_state().to_vec();
        metric.eval_truncated(&x, horizon)
    };
    let p0 = metric.eval_truncated(e, horizon)?;
    let d1 = (at(h)? - &p0) / h;
    let d2 = (at(0.5 * h)? - &p0) / (0.5 * h);
    let disagreement = (&d2 - &d1).amax();
    Ok((symmetrize(&(d2 * 2.0 - d1)), p0, disagreement))
}

/// Residual for an explicit driving field, congruence matrix and required
/// decrease `w`.
pub fn residual_with<M, D>(
    metric: &M,
    driver: &D,
    coupling: &DMatrix<f64>,
    decrease: &DMatrix<f64>,
    e: &[f64],
    h: f64,
    tolerance: f64,
) -> Result<ResidualEntry>
where
    M: MetricField + ?Sized,
    D: VectorField + ?Sized,
{
    let (dp, p, disagreement) = flow_derivative(metric, driver, e, h)?;
    if disagreement > 10.0 * tolerance {
        return Err(Error::UnreliableDerivative(format!(
            "difference quotients at h and h/2 differ by {disagreement:.3e} at {e:?} (h = {h:.1e})"
        )));
    }
    let r = symmetrize(&(dp + &p * coupling + coupling.transpose() * &p + decrease));
    Ok(ResidualEntry {
        point: e.to_vec(),
        max_eig: max_eigenvalue(&r),
        residual: rows(&r),
        h,
        disagreement,
    })
}

/// `d_F P + P J + Jᵀ P + Q` at `e` (weighted by `1 + |J|³` for the
/// rescaled variant).
pub fn lie_derivative_residual<M, V>(metric: &M, model: &V, e: &[f64], h: f64, tolerance: f64) -> Result<ResidualEntry>
where
    M: MetricField + ?Sized,
    V: VectorField + ?Sized,
{
    let j = model.jacobian(e)?;
    let weight = match metric.variant() {
        Variant::Rescaled => 1.0 + spectral_norm(&j).powi(3),
        _ => 1.0,
    };
    residual_with(metric, model, &j, &(metric.q() * weight), e, h, tolerance)
}

/// `d_G̃ P(x) + P A(x) + A(x)ᵀ P + Q` with `A(x) = ∂F/∂e(0, x)`.
pub fn transverse_residual(metric: &TransverseMetric, x: &[f64], h: f64, tolerance: f64) -> Result<ResidualEntry> {
    let model = metric.model();
    let a = model.df_de_on_manifold(x)?;
    residual_with(metric, &model.manifold_drift(), &a, metric.q(), x, h, tolerance)
}

/// Default difference step for a metric tolerance: `max(1e-4, √tol)`.
pub fn default_step(tol: f64) -> f64 {
    tol.sqrt().max(1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearSystem;
    use crate::metric::gramian_at_origin;

    #[test]
    fn algebraic_equality_for_constant_gramian() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let sys = LinearSystem::new(a).unwrap();
        let m = gramian_at_origin(&sys, &DMatrix::identity(2, 2)).unwrap();
        let r = lie_derivative_residual(&m, &sys, &[0.3, -0.7], 1e-4, 1e-6).unwrap();
        assert!(r.max_eig.abs() < 1e-7);
        assert!(r.residual.iter().flatten().all(|v| v.abs() < 1e-7));
        assert!(residual_report(vec![r], 1e-7).passed());
    }

    #[test]
    fn step_rule() {
        assert_eq!(default_step(1e-10), 1e-4);
        assert_eq!(default_step(1e-4), 1e-2);
    }
}
