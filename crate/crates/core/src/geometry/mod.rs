//! Riemannian structure induced by a metric field: Christoffel symbols,
//! geodesics, path lengths and the distance-to-origin Lyapunov function.

mod distance;
mod geodesic;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::FlowOptions;
use crate::error::{Error, Result};
use crate::linalg::{inverse, symmetrize, vec_norm};
use crate::metric::{MetricBounds, MetricField};
use crate::quadrature::gauss_legendre;

pub use distance::{
    contraction_check, dini_derivative_v, distance_field, distance_to_origin, pairwise_distance, write_distance_csv,
    ContractionCheck, DiniEstimate, DistanceMethod, DistanceValue, DINI_STEPS,
};
pub use geodesic::{geodesic_ivp, unit_velocity, GeodesicPath};

/// Relative change below which path-length refinement stops.
const LENGTH_TOL: f64 = 1e-8;
const MAX_LENGTH_PANELS: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryOptions {
    /// Relative tolerance for geodesic integration.
    pub tol: f64,
    /// Shooting stops once the endpoint mismatch is below
    /// `bvp_tol * (1 + |b - a|)`.
    pub bvp_tol: f64,
    pub max_iterations: usize,
    /// Geodesics leaving this ball raise [`Error::EscapedDomain`].
    pub domain_radius: Option<f64>,
    /// Flow settings for the decrease checks.
    pub flow: FlowOptions,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        GeometryOptions {
            tol: 1e-11,
            bvp_tol: 1e-9,
            max_iterations: 30,
            domain_radius: None,
            flow: FlowOptions::new(1e-11),
        }
    }
}

/// `P(e)` with its partial derivatives `∂_m P(e)`.
pub(crate) struct MetricJet {
    pub p: DMatrix<f64>,
    pub dp: Vec<DMatrix<f64>>,
}

/// Finite-difference step for metric derivatives at `e`.
fn stencil_step(e: &[f64]) -> f64 {
    1e-4 * (1.0 + vec_norm(e))
}

fn check_square_field<M: MetricField + ?Sized>(metric: &M, e: &[f64]) -> Result<()> {
    if metric.point_dim() != metric.dim() {
        return Err(Error::DimensionMismatch(format!(
            "geometry needs a metric on its own point space (points of dimension {}, matrices {})",
            metric.point_dim(),
            metric.dim()
        )));
    }
    if e.len() != metric.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {} but the metric has {}",
            e.len(),
            metric.dim()
        )));
    }
    Ok(())
}

/// Central differences of `P` around `e`. All stencil points share the
/// truncation horizon chosen at `e`, so integral-defined metrics are
/// differenced as one smooth function.
pub(crate) fn metric_jet<M: MetricField + ?Sized>(metric: &M, e: &[f64]) -> Result<MetricJet> {
    check_square_field(metric, e)?;
    let n = metric.dim();
    let horizon = metric.horizon(e)?;
    let p = symmetrize(&metric.eval_truncated(e, horizon)?);
    let h = stencil_step(e);
    let mut dp = Vec::with_capacity(n);
    let mut x = e.to_vec();
    for m in 0..n {
        x[m] = e[m] + h;
        let plus = metric.eval_truncated(&x, horizon)?;
        x[m] = e[m] - h;
        let minus = metric.eval_truncated(&x, horizon)?;
        x[m] = e[m];
        dp.push(symmetrize(&((plus - minus) / (2.0 * h))));
    }
    Ok(MetricJet { p, dp })
}

impl MetricJet {
    /// `Γ(e)[v, v]`, the quadratic term of the geodesic equation, using the
    /// contraction `P⁻¹ (Σ_i vᵢ ∂ᵢP v - ½ (vᵀ ∂_m P v)_m)`.
    pub fn quadratic(&self, p_inv: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        let n = v.len();
        let mut w = DVector::zeros(n);
        for (i, dpi) in self.dp.iter().enumerate() {
            w += dpi * v * v[i];
        }
        let z = DVector::from_iterator(n, self.dp.iter().map(|d| v.dot(&(d * v))));
        p_inv * (w - z * 0.5)
    }
}

/// Christoffel symbols `Γ^ℓ_{ij}`; `symbols[ℓ][(i, j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub symbols: Vec<DMatrix<f64>>,
}

impl Christoffel {
    pub fn get(&self, l: usize, i: usize, j: usize) -> f64 {
        self.symbols[l][(i, j)]
    }

    /// `(Γ^ℓ_{ij} vⁱ vʲ)_ℓ`.
    pub fn contract(&self, v: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(v);
        DVector::from_iterator(v.len(), self.symbols.iter().map(|g| v.dot(&(g * &v))))
    }
}

/// `Γ^ℓ_{ij} = ½ Σ_m (P⁻¹)^{ℓm} (∂ᵢP_{mj} + ∂ⱼP_{mi} - ∂_m P_{ij})` by
/// central differences with step `1e-4 (1 + |e|)`.
pub fn christoffel<M: MetricField + ?Sized>(metric: &M, e: &[f64]) -> Result<Christoffel> {
    let jet = metric_jet(metric, e)?;
    let n = jet.p.nrows();
    let p_inv = inverse(&jet.p, "P")?;
    let mut symbols = vec![DMatrix::zeros(n, n); n];
    for (l, gl) in symbols.iter_mut().enumerate() {
        for i in 0..n {
            for j in 0..n {
                gl[(i, j)] = 0.5
                    * (0..n)
                        .map(|m| p_inv[(l, m)] * (jet.dp[i][(m, j)] + jet.dp[j][(m, i)] - jet.dp[m][(i, j)]))
                        .sum::<f64>();
            }
        }
    }
    Ok(Christoffel { symbols })
}

/// `√(dᵀ P(a + τd) d)` integrated over `τ ∈ [0, 1]` with `panels` panels.
fn segment_length<M: MetricField + ?Sized>(metric: &M, a: &[f64], d: &[f64], panels: usize) -> Result<f64> {
    let dv = DVector::from_column_slice(d);
    let width = 1.0 / panels as f64;
    let nodes: Vec<(f64, f64)> = (0..panels)
        .flat_map(|k| gauss_legendre(k as f64 * width, (k + 1) as f64 * width))
        .collect();
    let speeds = nodes
        .par_iter()
        .map(|&(tau, _)| {
            let x: Vec<f64> = a.iter().zip(d).map(|(ai, di)| ai + tau * di).collect();
            let p = metric.eval(&x)?;
            Ok(dv.dot(&(p * &dv)).max(0.0).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(nodes.iter().zip(speeds).map(|((_, w), s)| w * s).sum())
}

/// Length of the polyline through `path`, each piece integrated by a
/// composite Gauss rule refined by panel doubling until the relative change
/// is at most `1e-8`.
pub fn riemannian_length<M: MetricField + ?Sized>(metric: &M, path: &[Vec<f64>]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidArgument("a path needs at least two points".into()));
    }
    let mut total = 0.0;
    for w in path.windows(2) {
        check_square_field(metric, &w[0])?;
        check_square_field(metric, &w[1])?;
        let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        if d.iter().all(|x| *x == 0.0) {
            continue;
        }
        let mut panels = 1;
        let mut prev = segment_length(metric, &w[0], &d, panels)?;
        while panels < MAX_LENGTH_PANELS {
            panels *= 2;
            let next = segment_length(metric, &w[0], &d, panels)?;
            let done = (next - prev).abs() <= LENGTH_TOL * next.abs();
            prev = next;
            if done {
                break;
            }
        }
        total += prev;
    }
    Ok(total)
}

/// Radial envelopes `p̲(s) ≤ P ≤ p̄(s)` on `|e| ≤ s`, as step functions
/// over a radii grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub radii: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Envelope {
    pub fn from_bounds(bounds: &MetricBounds) -> Self {
        Envelope {
            radii: bounds.rows.iter().map(|r| r.s).collect(),
            lower: bounds.rows.iter().map(|r| r.analytic_lower).collect(),
            upper: bounds.rows.iter().map(|r| r.analytic_upper).collect(),
        }
    }

    /// The same bounds everywhere.
    pub fn constant(lower: f64, upper: f64) -> Self {
        Envelope {
            radii: vec![f64::INFINITY],
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    fn index(&self, s: f64) -> Option<usize> {
        self.radii.iter().position(|r| *r >= s * (1.0 - 1e-12))
    }

    pub fn lower(&self, s: f64) -> Option<f64> {
        self.index(s).map(|i| self.lower[i])
    }

    pub fn upper(&self, s: f64) -> Option<f64> {
        self.index(s).map(|i| self.upper[i])
    }

    /// `√p̲(r)·d ≤ value ≤ √p̄(r)·d`, or `None` beyond the grid.
    pub fn sandwich(&self, r: f64, d: f64, value: f64) -> Option<bool> {
        let (lo, hi) = (self.lower(r)?, self.upper(r)?);
        let slack = 1e-9 * (1.0 + value);
        Some(lo.sqrt() * d <= value + slack && value <= hi.sqrt() * d + slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{ConstantMetric, FnMetric};

    fn quadratic_1d() -> FnMetric<impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync> {
        FnMetric::new(1, |e: &[f64]| DMatrix::from_element(1, 1, 1.0 + e[0] * e[0]))
    }

    #[test]
    fn constant_metric_is_flat() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = ConstantMetric::new(p.clone(), DMatrix::identity(2, 2)).unwrap();
        let g = christoffel(&m, &[0.3, -0.7]).unwrap();
        assert!(g.symbols.iter().all(|s| s.amax() == 0.0));
        let e = nalgebra::DVector::from_vec(vec![0.3, -0.7]);
        let len = riemannian_length(&m, &[e.as_slice().to_vec(), vec![0.0, 0.0]]).unwrap();
        assert!((len - e.dot(&(&p * &e)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_symbols() {
        let m = quadratic_1d();
        for e in [-1.5, 0.0, 0.4, 2.0] {
            let g = christoffel(&m, &[e]).unwrap();
            let exact = 2.0 * e / (2.0 * (1.0 + e * e));
            assert!((g.get(0, 0, 0) - exact).abs() < 1e-5, "{e}");
        }
    }

    #[test]
    fn symbols_are_symmetric() {
        let m = FnMetric::new(2, |e: &[f64]| {
            DMatrix::from_row_slice(2, 2, &[1.0 + e[0] * e[0], 0.3 * e[1], 0.3 * e[1], 2.0 + e[0].sin()])
        });
        let g = christoffel(&m, &[0.4, -0.9]).unwrap();
        for s in &g.symbols {
            assert_eq!(s, &s.transpose());
        }
    }

    #[test]
    fn length_of_half_metric() {
        let m = FnMetric::new(1, |_: &[f64]| DMatrix::from_element(1, 1, 0.5));
        let len = riemannian_length(&m, &[vec![0.0], vec![1.0]]).unwrap();
        assert!((len - 0.5f64.sqrt()).abs() < 1e-14);
        assert!(riemannian_length(&m, &[vec![0.0]]).is_err());
    }

    #[test]
    fn length_converges() {
        // ∫₀² √(1 + σ²) dσ = (2√5 + asinh 2) / 2
        let m = quadratic_1d();
        let len = riemannian_length(&m, &[vec![0.0], vec![2.0]]).unwrap();
        let exact = (2.0 * 5f64.sqrt() + 2f64.asinh()) / 2.0;
        assert!((len - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn envelope_lookup() {
        let env = Envelope {
            radii: vec![1.0, 2.0],
            lower: vec![0.5, 0.4],
            upper: vec![2.0, 8.0],
        };
        assert_eq!(env.upper(0.3), Some(2.0));
        assert_eq!(env.lower(1.5), Some(0.4));
        assert_eq!(env.upper(2.5), None);
        assert_eq!(env.sandwich(1.0, 1.0, 1.0), Some(true));
        assert_eq!(env.sandwich(1.0, 1.0, 0.1), Some(false));
    }
}
