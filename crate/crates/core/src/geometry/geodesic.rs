use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_square_field, metric_jet, GeometryOptions};
use crate::dynamics::{fmt17, integrate, DenseSolution, IntegratorOptions};
use crate::error::{Error, Result};
use crate::linalg::{inverse, vec_norm};
use crate::metric::MetricField;

/// A solution of `γ'' + Γ(γ)[γ', γ'] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub s: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// `√(γ'ᵀ P(γ) γ')` at each grid point.
    pub speeds: Vec<f64>,
    /// Started with unit P-speed.
    pub normalized: bool,
    /// `∫ √(γ'ᵀ P(γ) γ') ds`, integrated alongside the path.
    pub length: f64,
}

impl GeodesicPath {
    pub fn end(&self) -> &[f64] {
        self.points.last().unwrap()
    }

    pub fn end_velocity(&self) -> &[f64] {
        self.velocities.last().unwrap()
    }

    /// CSV `s,gamma_1..gamma_n,speed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.points.first().map_or(0, Vec::len);
        let mut header = vec!["s".to_string()];
        header.extend((1..=n).map(|i| format!("gamma_{i}")));
        header.push("speed".into());
        writeln!(w, "{}", header.join(","))?;
        for ((s, p), v) in self.s.iter().zip(&self.points).zip(&self.speeds) {
            let mut row = vec![fmt17(*s)];
            row.extend(p.iter().map(|x| fmt17(*x)));
            row.push(fmt17(*v));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrate the geodesic equation with the length as an extra state:
/// `y = [γ, γ', ℓ]`.
pub(crate) fn shoot<M: MetricField + ?Sized>(
    metric: &M,
    e: &[f64],
    v: &[f64],
    s_end: f64,
    opts: &GeometryOptions,
) -> Result<DenseSolution> {
    let n = e.len();
    let mut y0 = Vec::with_capacity(2 * n + 1);
    y0.extend_from_slice(e);
    y0.extend_from_slice(v);
    y0.push(0.0);
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let jet = metric_jet(metric, &y[..n])?;
        let p_inv = inverse(&jet.p, "P")?;
        let vel = DVector::from_column_slice(&y[n..2 * n]);
        let acc = jet.quadratic(&p_inv, &vel);
        dy[..n].copy_from_slice(&y[n..2 * n]);
        for i in 0..n {
            dy[n + i] = -acc[i];
        }
        dy[2 * n] = vel.dot(&(&jet.p * &vel)).max(0.0).sqrt();
        Ok(())
    };
    let iopts = IntegratorOptions {
        rtol: opts.tol,
        atol: 1e-14,
        floor: 1e-3,
        monitor: n,
        dense: false,
        ..Default::default()
    };
    let mut escaped = None;
    let sol = integrate(rhs, 0.0, &y0, s_end, &iopts, |_, y| match opts.domain_radius {
        Some(r) if vec_norm(&y[..n]) > r => {
            escaped = Some(y[..n].to_vec());
            true
        }
        _ => false,
    })?;
    match escaped {
        Some(p) => Err(Error::EscapedDomain(p)),
        None => Ok(sol),
    }
}

/// `v` scaled to unit P-speed at `e`.
pub fn unit_velocity<M: MetricField + ?Sized>(metric: &M, e: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_square_field(metric, e)?;
    let p = metric.eval(e)?;
    let vv = DVector::from_column_slice(v);
    let speed = vv.dot(&(p * &vv)).sqrt();
    if !(speed > 0.0) {
        return Err(Error::InvalidArgument("velocity has zero P-speed".into()));
    }
    Ok(v.iter().map(|x| x / speed).collect())
}

/// Geodesic from `(e, v)` over `s ∈ [0, s_max]`.
///
/// The path is flagged `normalized` when `v` has unit P-speed; use
/// [`unit_velocity`] to arrange that.
pub fn geodesic_ivp<M: MetricField + ?Sized>(
    metric: &M,
    e: &[f64],
    v: &[f64],
    s_max: f64,
    opts: &GeometryOptions,
) -> Result<GeodesicPath> {
    check_square_field(metric, e)?;
    let n = e.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!("velocity has dimension {} (expected {n})", v.len())));
    }
    if v.iter().all(|x| *x == 0.0) {
        return Err(Error::InvalidArgument("initial velocity must be nonzero".into()));
    }
    if !(s_max >= 0.0 && s_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("arc length {s_max} must be finite and >= 0")));
    }
    let sol = shoot(metric, e, v, s_max, opts)?;
    let points: Vec<Vec<f64>> = sol.states().map(|y| y[..n].to_vec()).collect();
    let velocities: Vec<Vec<f64>> = sol.states().map(|y| y[n..2 * n].to_vec()).collect();
    let speeds = points
        .par_iter()
        .zip(&velocities)
        .map(|(p, v)| {
            let m = metric.eval(p)?;
            let vv = DVector::from_column_slice(v);
            Ok(vv.dot(&(m * &vv)).max(0.0).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GeodesicPath {
        normalized: (speeds[0] - 1.0).abs() <= 1e-9,
        length: sol.last()[2 * n],
        s: sol.ts,
        points,
        velocities,
        speeds,
    })
}
