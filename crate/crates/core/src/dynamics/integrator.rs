//! Dormand–Prince 5(4) with step-size control and 4th-order continuous extension.
//!
//! Coefficients and the dense-output scheme follow Hairer, Nørsett & Wanner,
//! *Solving Ordinary Differential Equations I*, routine DOPRI5.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Which components share the relative error floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloorGroups {
    /// One group spanning the whole vector.
    All,
    /// `[state | Φ | aux]` with `Φ` an `m×m` column-major block: each state
    /// component stands alone, each row of `Φ` is a group and the trailing
    /// auxiliary block is one group.
    Blocks { state: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Error scale never drops below `floor` times the largest magnitude in
    /// the component's group, so a small entry keeps accuracy relative to
    /// its neighbours instead of sinking under `atol`.
    pub floor: f64,
    pub groups: FloorGroups,
    pub max_steps: usize,
    /// Largest step magnitude; `f64::INFINITY` for none.
    pub h_max: f64,
    /// Error raised when the norm of the monitored components exceeds this.
    pub blowup_bound: f64,
    /// Number of leading components monitored for blow-up; 0 monitors all.
    pub monitor: usize,
    /// Keep continuous-extension data for every step.
    pub dense: bool,
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-10,
            floor: 0.0,
            groups: FloorGroups::All,
            max_steps: 2_000_000,
            h_max: f64::INFINITY,
            blowup_bound: 1e8,
            monitor: 0,
            dense: true,
        }
    }
}

/// Accepted steps plus continuous-extension coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub ts: Vec<f64>,
    dim: usize,
    /// States at `ts`, flattened with stride `dim`.
    ys: Vec<f64>,
    /// Five coefficient vectors per step, flattened with stride `5 * dim`.
    rcont: Vec<f64>,
    /// Sum of accepted local error norms (scaled, dimensionless).
    pub error_estimate: f64,
    pub rhs_evals: usize,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.ts.len() - 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State at the `i`-th accepted time.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.ys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.ys.chunks_exact(self.dim.max(1))
    }

    pub fn has_dense(&self) -> bool {
        !self.rcont.is_empty() || self.ts.len() == 1
    }

    /// Interpolated state at `t`, which must lie inside the integrated span.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        let (lo, hi) = if self.t_start() <= self.t_end() {
            (self.t_start(), self.t_end())
        } else {
            (self.t_end(), self.t_start())
        };
        if t < lo || t > hi || !self.has_dense() {
            return None;
        }
        if self.ts.len() == 1 {
            return Some(self.state(0).to_vec());
        }
        let forward = self.t_end() >= self.t_start();
        let idx = self
            .ts
            .partition_point(|&s| if forward { s < t } else { s > t })
            .clamp(1, self.ts.len() - 1);
        let (t0, t1) = (self.ts[idx - 1], self.ts[idx]);
        if t == t1 {
            return Some(self.state(idx).to_vec());
        }
        let theta = (t - t0) / (t1 - t0);
        let theta1 = 1.0 - theta;
        let n = self.dim;
        let block = &self.rcont[5 * n * (idx - 1)..5 * n * idx];
        let (r1, rest) = block.split_at(n);
        let (r2, rest) = rest.split_at(n);
        let (r3, rest) = rest.split_at(n);
        let (r4, r5) = rest.split_at(n);
        Some(
            (0..n)
                .map(|i| r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i]))))
                .collect(),
        )
    }
}

fn rms_norm(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

fn monitored_norm(y: &[f64], monitor: usize) -> f64 {
    let m = if monitor == 0 { y.len() } else { monitor.min(y.len()) };
    y[..m].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn floor_levels(opts: &IntegratorOptions, y: &[f64], level: &mut [f64]) {
    let n = y.len();
    let group_max = |idx: &mut dyn Iterator<Item = usize>| idx.fold(0.0f64, |m, i| m.max(y[i].abs()));
    match opts.groups {
        FloorGroups::All => {
            let l = opts.floor * group_max(&mut (0..n));
            level.fill(l);
        }
        FloorGroups::Blocks { state, m } => {
            let state = state.min(n);
            level[..state].fill(0.0);
            let phi_end = (state + m * m).min(n);
            for r in 0..m {
                let mut idx = (0..m).map(|c| state + c * m + r).filter(|&i| i < phi_end);
                let l = opts.floor * group_max(&mut idx);
                for c in 0..m {
                    let i = state + c * m + r;
                    if i < phi_end {
                        level[i] = l;
                    }
                }
            }
            let l = opts.floor * group_max(&mut (phi_end..n));
            level[phi_end..].fill(l);
        }
    }
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t_end` (either direction).
///
/// `stop` is consulted after every accepted step; returning `true` ends the
/// integration early at that step.
pub fn integrate<F, S>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &IntegratorOptions,
    mut stop: S,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(f64, &[f64]) -> bool,
{
    let n = y0.len();
    if !(opts.rtol > 0.0 && opts.atol >= 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }
    let mut sol = DenseSolution {
        ts: vec![t0],
        dim: n,
        ys: y0.to_vec(),
        rcont: Vec::new(),
        error_estimate: 0.0,
        rhs_evals: 0,
    };
    if t_end == t0 || n == 0 {
        return Ok(sol);
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    let mut t = t0;
    let mut y = y0.to_vec();
    rhs(t, &y, &mut k1)?;
    sol.rhs_evals += 1;

    let mut level = vec![0.0; n];
    floor_levels(opts, &y, &mut level);
    let scale = |a: f64, b: f64, level: f64| opts.atol + opts.rtol * a.abs().max(b.abs()).max(level);

    // Initial step guess (Hairer's HINIT). Components starting at zero
    // borrow the whole-vector floor here so they do not force a tiny step.
    let mut h = {
        let overall = opts.floor * y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let level: Vec<f64> = level.iter().map(|l| l.max(overall)).collect();
        let d0 = rms_norm((0..n).map(|i| y[i] / scale(y[i], y[i], level[i])), n);
        let d1 = rms_norm((0..n).map(|i| k1[i] / scale(y[i], y[i], level[i])), n);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span).min(opts.h_max);
        for i in 0..n {
            ytmp[i] = y[i] + dir * h0 * k1[i];
        }
        rhs(t + dir * h0, &ytmp, &mut k2)?;
        sol.rhs_evals += 1;
        let d2 = rms_norm(
            (0..n).map(|i| (k2[i] - k1[i]) / scale(y[i], y[i], level[i])),
            n,
        ) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(opts.h_max)
    };

    let mut steps = 0usize;
    let mut rejected_last = false;
    loop {
        if steps >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let remaining = (t_end - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let mut last = false;
        if h >= remaining || (remaining - h) < 1e-12 * span {
            h = remaining;
            last = true;
        }
        if h < 1e-14 * t.abs().max(span).max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        let hs = dir * h;

        for i in 0..n {
            ytmp[i] = y[i] + hs * A21 * k1[i];
        }
        rhs(t + C2 * hs, &ytmp, &mut k2)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * hs, &ytmp, &mut k3)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * hs, &ytmp, &mut k4)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * hs, &ytmp, &mut k5)?;
        for i in 0..n {
            ytmp[i] = y[i]
                + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + hs };
        rhs(t + hs, &ytmp, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t_new, &ynew, &mut k7)?;
        sol.rhs_evals += 6;
        steps += 1;

        let err = rms_norm(
            (0..n).map(|i| {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                e / scale(y[i], ynew[i], level[i])
            }),
            n,
        );
        if !err.is_finite() {
            h *= 0.2;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            if opts.dense {
                let ydiff = |i: usize| ynew[i] - y[i];
                let bspl = |i: usize| hs * k1[i] - ydiff(i);
                sol.rcont.extend_from_slice(&y);
                sol.rcont.extend((0..n).map(ydiff));
                sol.rcont.extend((0..n).map(bspl));
                sol.rcont.extend((0..n).map(|i| ydiff(i) - hs * k7[i] - bspl(i)));
                sol.rcont.extend((0..n).map(|i| {
                    hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                }));
            }
            t = t_new;
            y.copy_from_slice(&ynew);
            floor_levels(opts, &y, &mut level);
            k1.copy_from_slice(&k7);
            sol.ts.push(t);
            sol.ys.extend_from_slice(&y);
            sol.error_estimate += err;

            let norm = monitored_norm(&y, opts.monitor);
            if !norm.is_finite() || norm > opts.blowup_bound {
                return Err(Error::BlowUp { t, norm });
            }
            if last || stop(t, &y) {
                break;
            }
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, if rejected_last { 1.0 } else { 5.0 });
            h = (h * fac).min(opts.h_max);
            rejected_last = false;
        } else {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            rejected_last = true;
        }
    }
    Ok(sol)
}
