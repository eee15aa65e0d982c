//! Metric matrix functions `e ↦ P(e)` and their matrix inequalities.

mod along;
mod bounds;
mod gramian;
mod residual;

use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::fmt17;
use crate::error::Result;

pub use along::{
    metric_along_solutions, rescaled_metric, transverse_metric, GramianMetric, RescaledMetric, TransverseMetric,
};
pub use bounds::{completeness, metric_bounds, transverse_bounds, BoundRow, Completeness, MetricBounds};
pub use gramian::{gramian_at_origin, lyapunov_gramian};
pub(crate) use residual::flow_derivative;
pub use residual::{
    default_step, lie_derivative_residual, residual_report, residual_with, transverse_residual, ResidualEntry,
    ResidualReport,
};

/// Which construction produced a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Origin,
    AlongSolutions,
    Transverse,
    Rescaled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Origin => "origin",
            Variant::AlongSolutions => "along-solutions",
            Variant::Transverse => "transverse",
            Variant::Rescaled => "rescaled",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(Variant::Origin),
            "along-solutions" | "along_solutions" => Ok(Variant::AlongSolutions),
            "transverse" => Ok(Variant::Transverse),
            "rescaled" => Ok(Variant::Rescaled),
            _ => Err(crate::Error::InvalidArgument(format!(
                "unknown metric variant `{s}` (origin | along-solutions | transverse | rescaled)"
            ))),
        }
    }
}

/// A symmetric positive definite matrix field.
pub trait MetricField: Send + Sync {
    /// Size of the matrices.
    fn dim(&self) -> usize;

    /// Dimension of the points the field is evaluated at.
    fn point_dim(&self) -> usize {
        self.dim()
    }

    fn eval(&self, e: &[f64]) -> Result<DMatrix<f64>> {
        let horizon = self.horizon(e)?;
        self.eval_truncated(e, horizon)
    }

    /// Evaluation with an explicit truncation horizon for integral-defined
    /// metrics; other metrics ignore it.
    fn eval_truncated(&self, e: &[f64], horizon: Option<f64>) -> Result<DMatrix<f64>>;

    /// Truncation horizon the metric would pick at `e`, if any.
    fn horizon(&self, _e: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }

    fn q(&self) -> &DMatrix<f64>;

    fn variant(&self) -> Variant;
}

impl<T: MetricField + ?Sized> MetricField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn point_dim(&self) -> usize {
        (**self).point_dim()
    }
    fn eval(&self, e: &[f64]) -> Result<DMatrix<f64>> {
        (**self).eval(e)
    }
    fn eval_truncated(&self, e: &[f64], horizon: Option<f64>) -> Result<DMatrix<f64>> {
        (**self).eval_truncated(e, horizon)
    }
    fn horizon(&self, e: &[f64]) -> Result<Option<f64>> {
        (**self).horizon(e)
    }
    fn q(&self) -> &DMatrix<f64> {
        (**self).q()
    }
    fn variant(&self) -> Variant {
        (**self).variant()
    }
}

/// `P(e) = P` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMetric {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl ConstantMetric {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        crate::linalg::check_positive_definite(&p, "P")?;
        Ok(ConstantMetric { p, q })
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.p.nrows()
    }
    fn eval_truncated(&self, e: &[f64], _: Option<f64>) -> Result<DMatrix<f64>> {
        check_point(e, self.point_dim())?;
        Ok(self.p.clone())
    }
    fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn variant(&self) -> Variant {
        Variant::Origin
    }
}

/// A metric given by a closure.
pub struct FnMetric<F> {
    dim: usize,
    q: DMatrix<f64>,
    f: F,
}

impl<F> FnMetric<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnMetric {
            dim,
            q: DMatrix::identity(dim, dim),
            f,
        }
    }
}

impl<F> MetricField for FnMetric<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_truncated(&self, e: &[f64], _: Option<f64>) -> Result<DMatrix<f64>> {
        check_point(e, self.dim)?;
        Ok((self.f)(e))
    }
    fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn variant(&self) -> Variant {
        Variant::Origin
    }
}

pub(crate) fn check_point(e: &[f64], n: usize) -> Result<()> {
    if e.len() != n {
        return Err(crate::Error::DimensionMismatch(format!(
            "metric evaluated at a point of dimension {} (expected {n})",
            e.len()
        )));
    }
    Ok(())
}

/// Row-major nested vectors, for serialization.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// CSV `e_1..e_n,P_11..P_nn` over the given points (`x_i` for transverse metrics).
pub fn write_metric_csv<M: MetricField + ?Sized, W: Write>(
    metric: &M,
    points: &[Vec<f64>],
    values: &[DMatrix<f64>],
    mut w: W,
) -> io::Result<()> {
    let n = metric.point_dim();
    let m = metric.dim();
    // Transverse metrics live on the manifold coordinate x.
    let coord = if metric.variant() == Variant::Transverse { "x" } else { "e" };
    let mut header: Vec<String> = (1..=n).map(|i| format!("{coord}_{i}")).collect();
    for i in 1..=m {
        header.extend((1..=m).map(|j| format!("P_{i}{j}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for (e, p) in points.iter().zip(values) {
        let mut row: Vec<String> = e.iter().map(|v| fmt17(*v)).collect();
        for i in 0..m {
            row.extend((0..m).map(|j| fmt17(p[(i, j)])));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
