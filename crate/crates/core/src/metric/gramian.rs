use nalgebra::DMatrix;

use super::ConstantMetric;
use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::linalg::{check_positive_definite, spectral_abscissa, spectral_norm, symmetrize};
use crate::quadrature::gauss_legendre;

/// `∫₀^∞ exp(Aᵀs) R exp(As) ds` for Hurwitz `A` and symmetric `R`.
///
/// Quadrature on one short panel, then repeated doubling of the interval:
/// `P_{2h} = P_h + exp(Ah)ᵀ P_h exp(Ah)`.
fn gramian_integral(a: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let h = 0.25 / spectral_norm(a).max(1e-300);
    let mut p = DMatrix::zeros(a.nrows(), a.ncols());
    for (s, w) in gauss_legendre(0.0, h) {
        let e = (a * s).exp();
        p += e.transpose() * r * &e * w;
    }
    let mut step = (a * h).exp();
    for _ in 0..200 {
        p = &p + step.transpose() * &p * &step;
        step = &step * &step;
        if spectral_norm(&step).powi(2) < 1e-18 {
            break;
        }
    }
    symmetrize(&p)
}

/// Solution `P` of `AᵀP + PA + Q = 0` as the integral Gramian, polished by
/// iterative refinement on the residual.
pub fn lyapunov_gramian(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::DimensionMismatch("A and Q must be square of equal size".into()));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz { abscissa });
    }
    let residual = |p: &DMatrix<f64>| a.transpose() * p + p * a + q;
    let mut p = gramian_integral(a, q);
    let mut r = residual(&p);
    for _ in 0..6 {
        if r.amax() <= 1e-14 * (1.0 + p.amax()) {
            break;
        }
        let candidate = symmetrize(&(&p + gramian_integral(a, &symmetrize(&r))));
        let next = residual(&candidate);
        if next.amax() >= r.amax() {
            break;
        }
        p = candidate;
        r = next;
    }
    Ok(p)
}

/// Constant metric from the first-order approximation at the origin.
pub fn gramian_at_origin<V: VectorField + ?Sized>(model: &V, q: &DMatrix<f64>) -> Result<ConstantMetric> {
    check_positive_definite(q, "Q")?;
    let a = model.jacobian(&vec![0.0; model.dim()])?;
    let p = lyapunov_gramian(&a, q)?;
    check_positive_definite(&p, "Gramian")?;
    Ok(ConstantMetric { p, q: q.clone() })
}
