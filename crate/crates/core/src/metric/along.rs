use nalgebra::DMatrix;

use super::{check_point, MetricField, Variant};
use crate::dynamics::{driven_flow, flow_signed, transverse_linear_flow, FlowOptions, GramianChannel, Trajectory};
use crate::dynamics::{TransverseModel, VectorField};
use crate::error::{Error, Result};
use crate::linalg::{check_positive_definite, max_eigenvalue, spectral_norm, symmetrize};
use crate::stability::DecayEstimate;

/// Longest truncation horizon accepted before declaring the decay data
/// insufficient.
pub const HORIZON_CAP: f64 = 1e4;

/// Shared settings of the trajectory-defined metrics.
#[derive(Debug, Clone)]
struct Truncation {
    q: DMatrix<f64>,
    q_max: f64,
    decay: DecayEstimate,
    tol: f64,
    flow: FlowOptions,
}

impl Truncation {
    fn new(q: DMatrix<f64>, decay: DecayEstimate, tol: f64, n: usize) -> Result<Self> {
        if q.nrows() != n {
            return Err(Error::DimensionMismatch(format!("Q must be {n}x{n}")));
        }
        check_positive_definite(&q, "Q")?;
        if !(tol > 0.0 && tol < 1e-2) {
            return Err(Error::InvalidArgument(format!("metric tolerance {tol} outside (0, 1e-2)")));
        }
        if !(decay.lambda > 0.0) {
            return Err(Error::InvalidArgument("decay rate must be positive".into()));
        }
        Ok(Truncation {
            q_max: max_eigenvalue(&q),
            q,
            decay,
            tol,
            flow: FlowOptions::new((tol * 1e-2).clamp(1e-13, 1e-8)),
        })
    }

    fn gain(&self, s: f64) -> Result<f64> {
        self.decay.gain(s).ok_or_else(|| {
            Error::DecayDataInsufficient(format!(
                "no linearized gain available at radius {s} (table ends at {})",
                self.decay.radius
            ))
        })
    }

    /// Smallest `T` with `w k² μ_max(Q) e^{-2λT} / (2λ) <= tol`.
    fn horizon(&self, s: f64, weight: f64) -> Result<f64> {
        let k = self.gain(s)?;
        let lam = self.decay.lambda;
        let t = ((weight * k * k * self.q_max / (2.0 * lam * self.tol)).ln() / (2.0 * lam)).max(0.0);
        if t > HORIZON_CAP {
            return Err(Error::DecayDataInsufficient(format!(
                "tail bound needs horizon {t:.3e} > cap {HORIZON_CAP:.0e}"
            )));
        }
        Ok(t)
    }

    fn tail_bound(&self, s: f64, horizon: f64, weight: f64) -> Result<f64> {
        let k = self.gain(s)?;
        let lam = self.decay.lambda;
        Ok(weight * k * k * self.q_max * (-2.0 * lam * horizon).exp() / (2.0 * lam))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gramian_from(tr: &Trajectory, n: usize) -> DMatrix<f64> {
    symmetrize(&DMatrix::from_column_slice(n, n, tr.aux(tr.len() - 1)))
}

/// `P(e) = ∫₀^T Φ(e,s)ᵀ Q Φ(e,s) ds` along the solution from `e`.
#[derive(Debug, Clone)]
pub struct GramianMetric<V> {
    model: V,
    cfg: Truncation,
}

impl<V: VectorField> GramianMetric<V> {
    /// `decay` must bound the transition matrices: `|Φ(e,t)| <= k̃(|e|) e^{-λ̃t}`.
    pub fn new(model: V, q: DMatrix<f64>, decay: DecayEstimate, tol: f64) -> Result<Self> {
        let cfg = Truncation::new(q, decay, tol, model.dim())?;
        Ok(GramianMetric { model, cfg })
    }

    pub fn model(&self) -> &V {
        &self.model
    }

    pub fn decay(&self) -> &DecayEstimate {
        &self.cfg.decay
    }

    /// Analytic bound on the neglected tail at `e` for horizon `T`.
    pub fn tail_bound(&self, e: &[f64], horizon: f64) -> Result<f64> {
        self.cfg.tail_bound(norm(e), horizon, 1.0)
    }

    /// State, transition matrix and accumulated Gramian from `e` up to `T`.
    pub fn lifted_trajectory(&self, e: &[f64], horizon: f64) -> Result<Trajectory> {
        let n = self.model.dim();
        let channel = GramianChannel {
            q: &self.cfg.q,
            rescaled: false,
        };
        driven_flow(&self.model, &|y| self.model.jacobian(y), n, e, horizon, &self.cfg.flow, Some(channel))
    }
}

impl<V: VectorField> MetricField for GramianMetric<V> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn eval_truncated(&self, e: &[f64], horizon: Option<f64>) -> Result<DMatrix<f64>> {
        check_point(e, self.dim())?;
        let t = match horizon {
            Some(t) => t,
            None => self.cfg.horizon(norm(e), 1.0)?,
        };
        Ok(gramian_from(&self.lifted_trajectory(e, t)?, self.dim()))
    }

    fn horizon(&self, e: &[f64]) -> Result<Option<f64>> {
        self.cfg.horizon(norm(e), 1.0).map(Some)
    }

    fn q(&self) -> &DMatrix<f64> {
        &self.cfg.q
    }

    fn variant(&self) -> Variant {
        Variant::AlongSolutions
    }
}

/// `P̃(e) = ∫ Φ̃ᵀ Q Φ̃ ds` for the transition matrix of the lifted system
/// after the time rescaling `ds = (1 + |∂F/∂e|³) dt`.
///
/// Evaluated in original time, where the integrand picks up the factor
/// `1 + |∂F/∂e(E)|³`.
#[derive(Debug, Clone)]
pub struct RescaledMetric<V> {
    model: V,
    cfg: Truncation,
}

impl<V: VectorField> RescaledMetric<V> {
    pub fn new(model: V, q: DMatrix<f64>, decay: DecayEstimate, tol: f64) -> Result<Self> {
        let cfg = Truncation::new(q, decay, tol, model.dim())?;
        Ok(RescaledMetric { model, cfg })
    }

    pub fn model(&self) -> &V {
        &self.model
    }

    /// `1 + |∂F/∂e(e)|³`.
    pub fn weight(&self, e: &[f64]) -> Result<f64> {
        Ok(1.0 + spectral_norm(&self.model.jacobian(e)?).powi(3))
    }

    /// Largest weight along the solution from `e` on `[0, T]`.
    fn path_weight(&self, e: &[f64], horizon: f64) -> Result<f64> {
        let tr = flow_signed(&self.model, e, horizon, &self.cfg.flow)?;
        let mut w = self.weight(&vec![0.0; self.dim()])?;
        for i in 0..tr.len() {
            w = w.max(self.weight(tr.state(i))?);
        }
        Ok(w)
    }

    /// Horizon whose tail bound, weighted by the largest `1 + |∂F/∂e|³`
    /// seen along the truncated path, is below the tolerance.
    fn pick_horizon(&self, e: &[f64]) -> Result<f64> {
        let s = norm(e);
        let mut w = self.weight(e)?.max(self.weight(&vec![0.0; self.dim()])?);
        let mut t = self.cfg.horizon(s, w)?;
        for _ in 0..4 {
            let seen = self.path_weight(e, t)?;
            if seen <= w {
                break;
            }
            w = seen;
            t = self.cfg.horizon(s, w)?;
        }
        Ok(t)
    }

    /// `μ_min(Q) / 2`.
    pub fn lower_bound(&self) -> f64 {
        crate::linalg::min_eigenvalue(&self.cfg.q) / 2.0
    }
}

impl<V: VectorField> MetricField for RescaledMetric<V> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn eval_truncated(&self, e: &[f64], horizon: Option<f64>) -> Result<DMatrix<f64>> {
        check_point(e, self.dim())?;
        let t = match horizon {
            Some(t) => t,
            None => self.pick_horizon(e)?,
        };
        let n = self.dim();
        let channel = GramianChannel {
            q: &self.cfg.q,
            rescaled: true,
        };
        let tr = driven_flow(&self.model, &|y| self.model.jacobian(y), n, e, t, &self.cfg.flow, Some(channel))?;
        Ok(gramian_from(&tr, n))
    }

    fn horizon(&self, e: &[f64]) -> Result<Option<f64>> {
        self.pick_horizon(e).map(Some)
    }

    fn q(&self) -> &DMatrix<f64> {
        &self.cfg.q
    }

    fn variant(&self) -> Variant {
        Variant::Rescaled
    }
}

/// `P(x) = ∫₀^T Φ(x,s)ᵀ Q Φ(x,s) ds` for the transversally linear system.
#[derive(Debug, Clone)]
pub struct TransverseMetric {
    model: TransverseModel,
    cfg: Truncation,
}

impl TransverseMetric {
    /// `decay` must be uniform in `x`: `|Φ(x,t)| <= k̃ e^{-λ̃t}`.
    pub fn new(model: TransverseModel, q: DMatrix<f64>, decay: DecayEstimate, tol: f64) -> Result<Self> {
        let cfg = Truncation::new(q, decay, tol, model.n_e())?;
        Ok(TransverseMetric { model, cfg })
    }

    pub fn model(&self) -> &TransverseModel {
        &self.model
    }

    pub fn decay(&self) -> &DecayEstimate {
        &self.cfg.decay
    }
}

impl MetricField for TransverseMetric {
    fn dim(&self) -> usize {
        self.model.n_e()
    }

    fn point_dim(&self) -> usize {
        self.model.n_x()
    }

    fn eval_truncated(&self, x: &[f64], horizon: Option<f64>) -> Result<DMatrix<f64>> {
        check_point(x, self.point_dim())?;
        let t = match horizon {
            Some(t) => t,
            None => self.cfg.horizon(norm(x), 1.0)?,
        };
        let channel = GramianChannel {
            q: &self.cfg.q,
            rescaled: false,
        };
        let tr = transverse_linear_flow(&self.model, x, t, &self.cfg.flow, Some(channel))?;
        Ok(gramian_from(&tr, self.dim()))
    }

    fn horizon(&self, x: &[f64]) -> Result<Option<f64>> {
        self.cfg.horizon(norm(x), 1.0).map(Some)
    }

    fn q(&self) -> &DMatrix<f64> {
        &self.cfg.q
    }

    fn variant(&self) -> Variant {
        Variant::Transverse
    }
}

/// `P(e)` along the solution from `e`, truncated by the analytic tail rule.
pub fn metric_along_solutions<V: VectorField>(
    model: V,
    e: &[f64],
    q: &DMatrix<f64>,
    decay: &DecayEstimate,
    tol: f64,
) -> Result<DMatrix<f64>> {
    GramianMetric::new(model, q.clone(), decay.clone(), tol)?.eval(e)
}

/// `P(x)` of the transversally linear system.
pub fn transverse_metric(
    model: &TransverseModel,
    x: &[f64],
    q: &DMatrix<f64>,
    decay: &DecayEstimate,
    tol: f64,
) -> Result<DMatrix<f64>> {
    TransverseMetric::new(model.clone(), q.clone(), decay.clone(), tol)?.eval(x)
}

/// Lower-bounded `P̃(e)` from the time-rescaled lifted system.
pub fn rescaled_metric<V: VectorField>(
    model: V,
    e: &[f64],
    q: &DMatrix<f64>,
    decay: &DecayEstimate,
    tol: f64,
) -> Result<DMatrix<f64>> {
    RescaledMetric::new(model, q.clone(), decay.clone(), tol)?.eval(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_system;

    fn unit_decay() -> DecayEstimate {
        DecayEstimate::constant(1.0, 1.0, 10.0)
    }

    #[test]
    fn linear_scalar_is_one_half() {
        let m = parse_system("dim=1; F1 = -x1").unwrap();
        let q = DMatrix::identity(1, 1);
        for e in [-3.0, 0.0, 2.0] {
            let p = metric_along_solutions(&m, &[e], &q, &unit_decay(), 1e-10).unwrap();
            assert!((p[(0, 0)] - 0.5).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn rescaled_linear_scalar_is_q() {
        let m = parse_system("dim=1; F1 = -x1").unwrap();
        let q = DMatrix::identity(1, 1);
        let p = rescaled_metric(&m, &[1.5], &q, &unit_decay(), 1e-10).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn horizon_cap() {
        let m = parse_system("dim=1; F1 = -x1").unwrap();
        let slow = DecayEstimate::constant(1e-6, 1.0, 10.0);
        let g = GramianMetric::new(&m, DMatrix::identity(1, 1), slow, 1e-10).unwrap();
        assert!(matches!(g.eval(&[1.0]), Err(Error::DecayDataInsufficient(_))));
        let g = GramianMetric::new(&m, DMatrix::identity(1, 1), unit_decay(), 1e-10).unwrap();
        assert!(matches!(g.eval(&[20.0]), Err(Error::DecayDataInsufficient(_))));
    }
}
