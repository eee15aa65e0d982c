use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geodesic::shoot;
use super::{check_square_field, riemannian_length, Envelope, GeometryOptions};
use crate::dynamics::{flow, fmt17, VectorField};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, vec_norm};
use crate::metric::MetricField;

/// Default step sequence for the Dini quotient.
pub const DINI_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// Segments of the multiple-shooting fallback.
const SEGMENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMethod {
    /// One-dimensional metric: the segment is the minimizing geodesic.
    Segment,
    Shooting,
    MultipleShooting,
    /// Both shooting methods failed; the value is an upper bound.
    StraightLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceValue {
    pub value: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub method: DistanceMethod,
    /// Endpoint mismatch of the accepted geodesic.
    pub residual: f64,
    pub iterations: usize,
    /// Length of the straight segment, always an upper bound.
    pub straight_line: f64,
    /// Only the straight-line upper bound is known.
    pub upper_bound: bool,
}

struct Shot {
    length: f64,
    residual: f64,
    iterations: usize,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Damped Newton; `None` when it stalls or a residual cannot be evaluated.
fn newton<R, J>(mut u: Vec<f64>, residual: R, jacobian: J, tol: f64, max_iterations: usize) -> Option<(Vec<f64>, f64, usize)>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
    J: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let mut r = residual(&u).ok()?;
    for it in 0..=max_iterations {
        let rn = vec_norm(&r);
        if rn <= tol {
            return Some((u, rn, it));
        }
        if it == max_iterations {
            break;
        }
        let jac = jacobian(&u).ok()?;
        let step = jac.lu().solve(&-DVector::from_column_slice(&r))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(rt) = residual(&trial) {
                if vec_norm(&rt) < rn {
                    u = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

/// End position, end velocity and length of the geodesic from `(a, v)`.
fn propagate<M: MetricField + ?Sized>(
    metric: &M,
    a: &[f64],
    v: &[f64],
    s_end: f64,
    opts: &GeometryOptions,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = a.len();
    let sol = shoot(metric, a, v, s_end, opts)?;
    let y = sol.last();
    Ok((y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n]))
}

fn fd_step(u: &[f64]) -> f64 {
    1e-7 * (1.0 + vec_norm(u))
}

fn single_shooting<M: MetricField + ?Sized>(
    metric: &M,
    a: &[f64],
    b: &[f64],
    tol: f64,
    opts: &GeometryOptions,
) -> Option<Shot> {
    let n = a.len();
    let residual = |v: &[f64]| propagate(metric, a, v, 1.0, opts).map(|(x, _, _)| sub(&x, b));
    let jacobian = |v: &[f64]| -> Result<DMatrix<f64>> {
        let base = residual(v)?;
        let h = fd_step(v);
        let cols = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut w = v.to_vec();
                w[k] += h;
                residual(&w).map(|r| sub(&r, &base).into_iter().map(|d| d / h).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(n, n, |i, k| cols[k][i]))
    };
    let (v, res, iterations) = newton(sub(b, a), residual, jacobian, tol, opts.max_iterations)?;
    let (_, _, length) = propagate(metric, a, &v, 1.0, opts).ok()?;
    Some(Shot {
        length,
        residual: res,
        iterations,
    })
}

/// Unknowns: interior nodes `x_1..x_7` then velocities `v_0..v_7`; each
/// segment spans `1/8` of the parameter interval.
fn multiple_shooting<M: MetricField + ?Sized>(
    metric: &M,
    a: &[f64],
    b: &[f64],
    tol: f64,
    opts: &GeometryOptions,
) -> Option<Shot> {
    let n = a.len();
    let ds = 1.0 / SEGMENTS as f64;
    let xs = (SEGMENTS - 1) * n;
    let size = xs + SEGMENTS * n;
    let node = |u: &[f64], k: usize| -> Vec<f64> {
        match k {
            0 => a.to_vec(),
            k if k == SEGMENTS => b.to_vec(),
            k => u[(k - 1) * n..k * n].to_vec(),
        }
    };
    let vel = |u: &[f64], k: usize| u[xs + k * n..xs + (k + 1) * n].to_vec();
    let segments = |u: &[f64]| -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
        (0..SEGMENTS)
            .into_par_iter()
            .map(|k| propagate(metric, &node(u, k), &vel(u, k), ds, opts))
            .collect()
    };
    let assemble = |u: &[f64], segs: &[(Vec<f64>, Vec<f64>, f64)]| -> Vec<f64> {
        let mut r = vec![0.0; size];
        for (k, (x, v, _)) in segs.iter().enumerate() {
            let target = node(u, k + 1);
            for i in 0..n {
                r[k * n + i] = x[i] - target[i];
            }
            if k + 1 < SEGMENTS {
                let next = vel(u, k + 1);
                for i in 0..n {
                    r[SEGMENTS * n + k * n + i] = v[i] - next[i];
                }
            }
        }
        r
    };
    let residual = |u: &[f64]| segments(u).map(|s| assemble(u, &s));
    let jacobian = |u: &[f64]| -> Result<DMatrix<f64>> {
        let h = fd_step(u);
        // Per segment: derivatives of (X_k, V_k) with respect to (x_k, v_k).
        let blocks = (0..SEGMENTS)
            .into_par_iter()
            .map(|k| {
                let (x0, v0) = (node(u, k), vel(u, k));
                let (bx, bv, _) = propagate(metric, &x0, &v0, ds, opts)?;
                let mut cols = Vec::with_capacity(2 * n);
                for c in 0..2 * n {
                    let (mut x, mut v) = (x0.clone(), v0.clone());
                    if c < n {
                        x[c] += h;
                    } else {
                        v[c - n] += h;
                    }
                    let (px, pv, _) = propagate(metric, &x, &v, ds, opts)?;
                    let mut col: Vec<f64> = sub(&px, &bx).into_iter().map(|d| d / h).collect();
                    col.extend(sub(&pv, &bv).into_iter().map(|d| d / h));
                    cols.push(col);
                }
                Ok(cols)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut jac = DMatrix::zeros(size, size);
        for (k, cols) in blocks.iter().enumerate() {
            let pos_row = k * n;
            let vel_row = SEGMENTS * n + k * n;
            let has_vel_row = k + 1 < SEGMENTS;
            for (c, col) in cols.iter().enumerate() {
                let unknown = if c < n {
                    if k == 0 {
                        continue;
                    }
                    (k - 1) * n + c
                } else {
                    xs + k * n + (c - n)
                };
                for i in 0..n {
                    jac[(pos_row + i, unknown)] = col[i];
                    if has_vel_row {
                        jac[(vel_row + i, unknown)] = col[n + i];
                    }
                }
            }
            for i in 0..n {
                if k + 1 < SEGMENTS {
                    jac[(pos_row + i, k * n + i)] = -1.0;
                    jac[(vel_row + i, xs + (k + 1) * n + i)] = -1.0;
                }
            }
        }
        Ok(jac)
    };
    let d = sub(b, a);
    let mut u0 = Vec::with_capacity(size);
    for k in 1..SEGMENTS {
        let t = k as f64 * ds;
        u0.extend(a.iter().zip(&d).map(|(ai, di)| ai + t * di));
    }
    for _ in 0..SEGMENTS {
        u0.extend_from_slice(&d);
    }
    let (u, res, iterations) = newton(u0, residual, jacobian, tol, opts.max_iterations)?;
    let length = segments(&u).ok()?.iter().map(|s| s.2).sum();
    Some(Shot {
        length,
        residual: res,
        iterations,
    })
}

/// Geodesic distance from `a` to `b`: single shooting from the straight
/// line, then multiple shooting, then the straight-line length flagged as
/// an upper bound. A geodesic longer than the straight segment is rejected
/// in favour of the flagged bound.
pub fn pairwise_distance<M: MetricField + ?Sized>(
    metric: &M,
    a: &[f64],
    b: &[f64],
    opts: &GeometryOptions,
) -> Result<DistanceValue> {
    check_square_field(metric, a)?;
    check_square_field(metric, b)?;
    let d = sub(b, a);
    let mut value = DistanceValue {
        value: 0.0,
        start: a.to_vec(),
        end: b.to_vec(),
        method: DistanceMethod::Segment,
        residual: 0.0,
        iterations: 0,
        straight_line: 0.0,
        upper_bound: false,
    };
    if d.iter().all(|x| *x == 0.0) {
        return Ok(value);
    }
    let straight = riemannian_length(metric, &[a.to_vec(), b.to_vec()])?;
    value.straight_line = straight;
    value.value = straight;
    if a.len() == 1 {
        return Ok(value);
    }
    let tol = opts.bvp_tol * (1.0 + vec_norm(&d));
    let attempt = single_shooting(metric, a, b, tol, opts)
        .map(|s| (s, DistanceMethod::Shooting))
        .or_else(|| multiple_shooting(metric, a, b, tol, opts).map(|s| (s, DistanceMethod::MultipleShooting)));
    match attempt {
        Some((shot, method)) if shot.length <= straight * (1.0 + 1e-8) + 1e-12 => {
            value.value = shot.length;
            value.method = method;
            value.residual = shot.residual;
            value.iterations = shot.iterations;
        }
        other => {
            value.method = DistanceMethod::StraightLine;
            value.upper_bound = true;
            if let Some((shot, _)) = other {
                value.residual = shot.residual;
                value.iterations = shot.iterations;
            }
        }
    }
    Ok(value)
}

/// `V(e) = d_P(0, e)`.
pub fn distance_to_origin<M: MetricField + ?Sized>(metric: &M, e: &[f64], opts: &GeometryOptions) -> Result<DistanceValue> {
    pairwise_distance(metric, &vec![0.0; e.len()], e, opts)
}

/// `V` over many points, in parallel and in input order.
pub fn distance_field<M: MetricField + ?Sized>(
    metric: &M,
    points: &[Vec<f64>],
    opts: &GeometryOptions,
) -> Result<Vec<DistanceValue>> {
    points.par_iter().map(|e| distance_to_origin(metric, e, opts)).collect()
}

/// CSV `e_1..e_n,V,upper_bound`.
pub fn write_distance_csv<W: Write>(values: &[DistanceValue], mut w: W) -> io::Result<()> {
    let n = values.first().map_or(0, |v| v.end.len());
    let mut header: Vec<String> = (1..=n).map(|i| format!("e_{i}")).collect();
    header.push("V".into());
    header.push("upper_bound".into());
    writeln!(w, "{}", header.join(","))?;
    for v in values {
        let mut row: Vec<String> = v.end.iter().map(|x| fmt17(*x)).collect();
        row.push(fmt17(v.value));
        row.push(v.upper_bound.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Upper Dini derivative of `V` along the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniEstimate {
    pub e: Vec<f64>,
    pub v: f64,
    pub steps: Vec<f64>,
    /// `(V(E(e, h)) - V(e)) / h` for each step.
    pub quotients: Vec<f64>,
    /// Richardson limit of the quotients.
    pub value: f64,
    /// `-μ_min(Q) V / (2 √p̄(|e|))`, when an envelope is known.
    pub bound: Option<f64>,
    /// Some distance in the stencil was only an upper bound; such points
    /// cannot certify decrease.
    pub flagged: bool,
}

impl DiniEstimate {
    /// `value ≤ bound + slack`, or `None` when flagged or unbounded.
    pub fn satisfies(&self, slack: f64) -> Option<bool> {
        if self.flagged {
            return None;
        }
        self.bound.map(|b| self.value <= b + slack)
    }
}

fn check_steps(steps: &[f64]) -> Result<()> {
    let ok = steps.len() >= 2 && steps[0] > 0.0 && steps.windows(2).all(|w| w[1] > 0.0 && w[1] < w[0]);
    if !ok {
        return Err(Error::InvalidArgument(
            "Dini steps must be positive, strictly decreasing and at least two".into(),
        ));
    }
    Ok(())
}

/// Richardson limits of consecutive quotient pairs, assuming an error
/// linear in `h`.
fn richardson(steps: &[f64], q: &[f64]) -> Vec<f64> {
    (0..q.len() - 1)
        .map(|k| {
            let r = steps[k] / steps[k + 1];
            (r * q[k + 1] - q[k]) / (r - 1.0)
        })
        .collect()
}

fn check_quotients(steps: &[f64], q: &[f64], limits: &[f64]) -> Result<()> {
    let scale = 1.0 + q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-4 * scale;
    let diffs: Vec<f64> = q.windows(2).map(|w| w[1] - w[0]).collect();
    for (k, w) in diffs.windows(2).enumerate() {
        if w[0] * w[1] < 0.0 && w[0].abs().min(w[1].abs()) > tol {
            return Err(Error::UnreliableDini(format!(
                "quotients not monotone in h around h = {}: {:?}",
                steps[k + 1],
                q
            )));
        }
    }
    if let [.., prev, last] = limits {
        if (last - prev).abs() > 1e-3 * (1.0 + last.abs()) {
            return Err(Error::UnreliableDini(format!(
                "extrapolated limits disagree: {prev:.6e} vs {last:.6e}"
            )));
        }
    }
    Ok(())
}

/// `D⁺V(e)` from forward quotients over a decreasing step sequence.
pub fn dini_derivative_v<M, V>(
    metric: &M,
    model: &V,
    e: &[f64],
    steps: &[f64],
    envelope: Option<&Envelope>,
    opts: &GeometryOptions,
) -> Result<DiniEstimate>
where
    M: MetricField + ?Sized,
    V: VectorField + ?Sized,
{
    check_steps(steps)?;
    let v0 = distance_to_origin(metric, e, opts)?;
    let moved = steps
        .par_iter()
        .map(|&h| {
            let tr = flow(model, e, h, &opts.flow)?;
            distance_to_origin(metric, tr.final_state(), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let quotients: Vec<f64> = moved.iter().zip(steps).map(|(d, h)| (d.value - v0.value) / h).collect();
    let limits = richardson(steps, &quotients);
    check_quotients(steps, &quotients, &limits)?;
    let bound = envelope.and_then(|env| env.upper(vec_norm(e))).map(|upper| {
        -min_eigenvalue(metric.q()) * v0.value / (2.0 * upper.sqrt())
    });
    Ok(DiniEstimate {
        e: e.to_vec(),
        v: v0.value,
        steps: steps.to_vec(),
        value: *limits.last().unwrap(),
        quotients,
        bound,
        flagged: v0.upper_bound || moved.iter().any(|d| d.upper_bound),
    })
}

/// Finite-step decrease of `d_P` between two solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub distance: DistanceValue,
    pub h: f64,
    /// `d_P(E(e1, h), E(e2, h))`.
    pub after: f64,
    /// `(after - d) / h`.
    pub rate: f64,
    /// `-μ_min(Q) d / (2 √p̄(r))` with `r = |e1 - e2| + |e2|`.
    pub rate_bound: Option<f64>,
    /// `√p̲(r)|e1 - e2| ≤ d ≤ √p̄(r)|e1 - e2|`, when the envelope covers `r`.
    pub sandwich: Option<bool>,
    pub flagged: bool,
}

impl ContractionCheck {
    pub fn contracting(&self) -> bool {
        self.rate < 0.0
    }
}

pub fn contraction_check<M, V>(
    metric: &M,
    model: &V,
    e1: &[f64],
    e2: &[f64],
    h: f64,
    envelope: Option<&Envelope>,
    opts: &GeometryOptions,
) -> Result<ContractionCheck>
where
    M: MetricField + ?Sized,
    V: VectorField + ?Sized,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let d = pairwise_distance(metric, e1, e2, opts)?;
    let f1 = flow(model, e1, h, &opts.flow)?;
    let f2 = flow(model, e2, h, &opts.flow)?;
    let after = pairwise_distance(metric, f1.final_state(), f2.final_state(), opts)?;
    let gap = vec_norm(&sub(e1, e2));
    let r = gap + vec_norm(e2);
    let rate_bound = envelope
        .and_then(|env| env.upper(r))
        .map(|upper| -min_eigenvalue(metric.q()) * d.value / (2.0 * upper.sqrt()));
    let sandwich = if d.upper_bound {
        None
    } else {
        envelope.and_then(|env| env.sandwich(r, gap, d.value))
    };
    Ok(ContractionCheck {
        h,
        rate: (after.value - d.value) / h,
        after: after.value,
        rate_bound,
        sandwich,
        flagged: d.upper_bound || after.upper_bound,
        distance: d,
    })
}
