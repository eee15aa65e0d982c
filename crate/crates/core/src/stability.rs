//! Decay envelopes and derivative bounds estimated from sampled trajectories.
//!
//! Every estimate is a statement about the sample set it was computed on;
//! the sample set travels with the estimate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_signed, transverse_linear_flow, FlowOptions, Trajectory, TransverseModel, VectorField};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::sampling;

/// Points used when regressing the log-norm over the tail `[T/2, T]`.
const TAIL_POINTS: usize = 65;
/// Uniform points added to the accepted steps when taking suprema.
const SUP_POINTS: usize = 256;
/// Growth factor over two horizon doublings read as unbounded.
const GROWTH_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub s: f64,
    pub k: f64,
}

/// How the gain table is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// `k(s)` tabulated over radii; valid up to the last radius.
    Radial,
    /// One constant valid for every point of the sampled domain.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub count: usize,
    pub seed: u64,
    pub horizon: f64,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub value: f64,
    pub note: String,
}

/// `|E(e,t)| <= k(|e|) exp(-λ t) |e|` over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub lambda: f64,
    pub kind: GainKind,
    pub gain_table: Vec<GainPoint>,
    pub radius: f64,
    pub samples: SampleSet,
    pub witnesses: Vec<Witness>,
}

impl DecayEstimate {
    /// Gain valid at radius `s`: the first tabulated radius at or above `s`.
    pub fn gain(&self, s: f64) -> Option<f64> {
        match self.kind {
            GainKind::Uniform => self.gain_table.first().map(|p| p.k),
            GainKind::Radial => self
                .gain_table
                .iter()
                .find(|p| p.s >= s * (1.0 - 1e-12))
                .map(|p| p.k),
        }
    }

    /// Constant envelope `(k, λ)` valid on `|e| <= r`.
    pub fn constant(lambda: f64, k: f64, radius: f64) -> Self {
        DecayEstimate {
            lambda,
            kind: GainKind::Radial,
            gain_table: vec![GainPoint { s: radius, k }],
            radius,
            samples: SampleSet {
                count: 0,
                seed: 0,
                horizon: 0.0,
                points: vec![],
            },
            witnesses: vec![],
        }
    }

    /// True when `norm <= k(|e|) exp(-λt) |e| (1 + eps)`.
    pub fn admits(&self, e0_norm: f64, t: f64, norm: f64, eps: f64) -> bool {
        match self.gain(e0_norm) {
            Some(k) => norm <= k * (-self.lambda * t).exp() * e0_norm * (1.0 + eps),
            None => false,
        }
    }
}

/// Sampling and accuracy settings for the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub seed: u64,
    pub flow: FlowOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            seed: 0,
            flow: FlowOptions::new(1e-10),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::InvalidArgument("radii grid is empty".into()));
    }
    for w in radii.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument("radii grid must be strictly increasing".into()));
        }
    }
    check_positive("radius", radii[0])
}

/// Evaluation times: accepted steps plus a uniform grid on `[0, horizon]`.
fn sample_times(tr: &Trajectory, horizon: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = tr.times().iter().copied().filter(|t| *t <= horizon).collect();
    ts.extend((0..=SUP_POINTS).map(|k| horizon * k as f64 / SUP_POINTS as f64));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Least-squares slope of `ln f(t)` over `[T/2, T]`; `-inf` when `f` has
/// decayed below representable range.
fn tail_slope(f: impl Fn(f64) -> f64, horizon: f64) -> f64 {
    let pts: Vec<(f64, f64)> = (0..TAIL_POINTS)
        .map(|k| horizon * (0.5 + 0.5 * k as f64 / (TAIL_POINTS - 1) as f64))
        .map(|t| (t, f(t)))
        .filter(|(_, v)| *v > 1e-300)
        .map(|(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    sxy / sxx
}

/// Per-sample decay data: the tail slope and the trajectory of norms.
struct Profile {
    point: Vec<f64>,
    scale: f64,
    slope: f64,
    ts: Vec<f64>,
    norms: Vec<f64>,
}

impl Profile {
    fn sup_weighted(&self, lambda: f64, until: f64) -> f64 {
        self.ts
            .iter()
            .zip(&self.norms)
            .filter(|(t, _)| **t <= until)
            .map(|(t, v)| v * (lambda * t).exp() / self.scale)
            .fold(0.0, f64::max)
    }
}

fn falsified_by_blowup(e: Error, point: &[f64], kind: fn(Vec<f64>, String) -> Error) -> Error {
    match e {
        Error::BlowUp { .. } => kind(point.to_vec(), e.to_string()),
        other => other,
    }
}

fn les_falsified(witness: Vec<f64>, detail: String) -> Error {
    Error::LesFalsified { witness, detail }
}

fn attractivity_falsified(witness: Vec<f64>, detail: String) -> Error {
    Error::AttractivityFalsified { witness, detail }
}

fn linearized_falsified(witness: Vec<f64>, detail: String) -> Error {
    Error::LinearizedDecayFalsified { witness, detail }
}

/// Profile `|E(e0, t)|` on `[0, horizon]`, integrating to `run` >= horizon.
fn state_profile<V: VectorField + ?Sized>(
    model: &V,
    e0: &[f64],
    horizon: f64,
    run: f64,
    opts: &FlowOptions,
    on_blowup: fn(Vec<f64>, String) -> Error,
) -> Result<Profile> {
    let tr = flow_signed(model, e0, run, opts).map_err(|e| falsified_by_blowup(e, e0, on_blowup))?;
    let ts = sample_times(&tr, run);
    let norms = ts.iter().map(|t| norm(&tr.state_at(*t).unwrap())).collect();
    let slope = tail_slope(|t| norm(&tr.state_at(t).unwrap()), horizon);
    Ok(Profile {
        point: e0.to_vec(),
        scale: norm(e0),
        slope,
        ts,
        norms,
    })
}

fn phi_profile(tr: &Trajectory, point: &[f64], horizon: f64) -> Profile {
    let ts = sample_times(tr, horizon);
    let norms = ts.iter().map(|t| spectral_norm(&tr.phi_at(*t).unwrap())).collect();
    let slope = tail_slope(|t| spectral_norm(&tr.phi_at(t).unwrap()), horizon);
    Profile {
        point: point.to_vec(),
        scale: 1.0,
        slope,
        ts,
        norms,
    }
}

/// First error in sample order, otherwise all profiles in sample order.
fn collect_ordered<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Minimal decay rate over the profiles; a non-decaying sample falsifies.
fn fit_rate(profiles: &[Profile], falsify: fn(Vec<f64>, String) -> Error) -> Result<(f64, Witness)> {
    let mut best: Option<(f64, &Profile)> = None;
    for p in profiles {
        let last = *p.norms.last().unwrap();
        if p.slope >= 0.0 || p.slope.is_nan() {
            return Err(falsify(
                p.point.clone(),
                format!("log-norm tail slope {:.4} is not negative", p.slope),
            ));
        }
        if last >= p.norms[0] {
            return Err(falsify(
                p.point.clone(),
                format!("norm {last:.4e} at the horizon did not drop below its initial value"),
            ));
        }
        let rate = -p.slope;
        if best.is_none_or(|(r, _)| rate < r) {
            best = Some((rate, p));
        }
    }
    let (rate, p) = best.ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    if !rate.is_finite() {
        return Err(Error::DecayDataInsufficient(
            "every sample decayed below floating-point range on the tail; shorten the horizon".into(),
        ));
    }
    Ok((
        rate,
        Witness {
            point: p.point.clone(),
            value: rate,
            note: "slowest tail decay rate".into(),
        },
    ))
}

fn sup_witness(profiles: &[Profile], lambda: f64, until: f64, note: &str) -> (f64, Witness) {
    let mut best = (0.0, &profiles[0]);
    for p in profiles {
        let v = p.sup_weighted(lambda, until);
        if v > best.0 {
            best = (v, p);
        }
    }
    (
        best.0,
        Witness {
            point: best.1.point.clone(),
            value: best.0,
            note: note.into(),
        },
    )
}

fn sample_set(points: Vec<Vec<f64>>, seed: u64, horizon: f64) -> SampleSet {
    SampleSet {
        count: points.len(),
        seed,
        horizon,
        points,
    }
}

/// Local exponential stability envelope `(k, λ)` on the ball of radius `radius`.
///
/// `λ` is the slowest log-linear tail rate over the samples; `k` is the
/// smallest constant making the envelope hold on every sampled trajectory.
pub fn estimate_les<V: VectorField + ?Sized>(
    model: &V,
    radius: f64,
    n_samples: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_positive("radius", radius)?;
    check_positive("horizon", horizon)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let points = sampling::shell(model.dim(), 0.0, radius, n_samples, opts.seed);
    let profiles = collect_ordered(
        points
            .par_iter()
            .map(|e0| state_profile(model, e0, horizon, horizon, &opts.flow, les_falsified))
            .collect(),
    )?;
    let (lambda, slow) = fit_rate(&profiles, les_falsified)?;
    let (k, worst) = sup_witness(&profiles, lambda, horizon, "largest overshoot |E| e^(λt) / |e0|");
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Radial,
        gain_table: vec![GainPoint { s: radius, k }],
        radius,
        samples: sample_set(points, opts.seed, horizon),
        witnesses: vec![slow, worst],
    })
}

/// Transversal decay of the `e` component of a coupled system, uniform over
/// `x0` in the box `[x_lo, x_hi]`.
pub fn estimate_tules(
    model: &TransverseModel,
    e_radius: f64,
    x_lo: &[f64],
    x_hi: &[f64],
    n_samples: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_positive("radius", e_radius)?;
    check_positive("horizon", horizon)?;
    check_box(model.n_x(), x_lo, x_hi)?;
    let es = sampling::shell(model.n_e(), 0.0, e_radius, n_samples, opts.seed);
    let xs = sampling::in_box(x_lo, x_hi, n_samples, opts.seed.wrapping_add(1));
    let full = model.full_system();
    let n_e = model.n_e();
    let profiles = collect_ordered(
        es.par_iter()
            .zip(&xs)
            .map(|(e0, x0)| {
                let z0: Vec<f64> = e0.iter().chain(x0).copied().collect();
                let tr = flow_signed(&full, &z0, horizon, &opts.flow)
                    .map_err(|e| falsified_by_blowup(e, &z0, les_falsified))?;
                let e_norm = |t: f64| norm(&tr.state_at(t).unwrap()[..n_e]);
                let ts = sample_times(&tr, horizon);
                Ok(Profile {
                    norms: ts.iter().map(|t| e_norm(*t)).collect(),
                    slope: tail_slope(e_norm, horizon),
                    ts,
                    scale: norm(e0),
                    point: z0,
                })
            })
            .collect(),
    )?;
    let (lambda, slow) = fit_rate(&profiles, les_falsified)?;
    let (k, worst) = sup_witness(&profiles, lambda, horizon, "largest overshoot |E| e^(λt) / |e0|");
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Uniform,
        gain_table: vec![GainPoint { s: e_radius, k }],
        radius: e_radius,
        samples: sample_set(profiles.iter().map(|p| p.point.clone()).collect(), opts.seed, horizon),
        witnesses: vec![slow, worst],
    })
}

fn check_box(n: usize, lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != n || hi.len() != n {
        return Err(Error::DimensionMismatch(format!("sample box must have dimension {n}")));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
        return Err(Error::InvalidArgument("sample box has lo > hi".into()));
    }
    Ok(())
}

/// Shell samples `(s_{j-1}, s_j]` per radius, seeded per shell.
fn shells(dim: usize, radii: &[f64], n: usize, seed: u64) -> Vec<(usize, Vec<f64>)> {
    radii
        .iter()
        .enumerate()
        .flat_map(|(j, &s)| {
            let inner = if j == 0 { 0.0 } else { radii[j - 1] };
            sampling::shell(dim, inner, s, n, seed.wrapping_add(j as u64))
                .into_iter()
                .map(move |p| (j, p))
        })
        .collect()
}

/// Cumulative maximum of per-shell values, floored by `floor`.
fn monotone_table(radii: &[f64], per_shell: &[f64], floor: f64) -> Vec<GainPoint> {
    let mut running = floor;
    radii
        .iter()
        .zip(per_shell)
        .map(|(&s, &c)| {
            running = running.max(c);
            GainPoint { s, k: running }
        })
        .collect()
}

/// Tabulated gain `k(s)` such that `|E(e,t)| <= k(|e|) e^{-λt} |e|` with
/// `λ = 0.9 λ_les`, following the sup construction over `c(e,t)`.
pub fn estimate_gain_function<V: VectorField + ?Sized>(
    model: &V,
    les: &DecayEstimate,
    radii: &[f64],
    n_per_radius: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_radii(radii)?;
    check_positive("horizon", horizon)?;
    let k1 = les
        .gain(les.radius)
        .ok_or_else(|| Error::InvalidArgument("local estimate has no gain".into()))?;
    let lambda = 0.9 * les.lambda;
    let samples = shells(model.dim(), radii, n_per_radius, opts.seed);
    let profiles = collect_ordered(
        samples
            .par_iter()
            .map(|(_, e0)| state_profile(model, e0, horizon, 4.0 * horizon, &opts.flow, attractivity_falsified))
            .collect(),
    )?;
    let mut per_shell = vec![0.0f64; radii.len()];
    let mut witnesses = Vec::new();
    for ((j, e0), p) in samples.iter().zip(&profiles) {
        let c1 = p.sup_weighted(lambda, horizon);
        let c4 = p.sup_weighted(lambda, 4.0 * horizon);
        if c4 >= GROWTH_FACTOR * c1 {
            return Err(Error::AttractivityFalsified {
                witness: e0.clone(),
                detail: format!(
                    "sup of |E| e^(λt)/|e| grew from {c1:.3e} to {c4:.3e} over two horizon doublings"
                ),
            });
        }
        if c4 > per_shell[*j] {
            per_shell[*j] = c4;
        }
    }
    for (j, c) in per_shell.iter().enumerate() {
        witnesses.push(Witness {
            point: vec![radii[j]],
            value: *c,
            note: "shell supremum of |E| e^(λt)/|e|".into(),
        });
    }
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Radial,
        gain_table: monotone_table(radii, &per_shell, k1),
        radius: radii[radii.len() - 1],
        samples: sample_set(samples.into_iter().map(|(_, p)| p).collect(), opts.seed, horizon),
        witnesses,
    })
}

/// Envelope `|Φ(e,t)| <= k̃(|e|) e^{-λ̃t}` of the lifted system.
pub fn estimate_linearized_decay<V: VectorField + ?Sized>(
    model: &V,
    radii: &[f64],
    n_per_radius: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_radii(radii)?;
    check_positive("horizon", horizon)?;
    let samples = shells(model.dim(), radii, n_per_radius, opts.seed);
    let profiles = collect_ordered(
        samples
            .par_iter()
            .map(|(_, e0)| {
                let tr = crate::dynamics::driven_flow(
                    model,
                    &|e| model.jacobian(e),
                    model.dim(),
                    e0,
                    horizon,
                    &opts.flow,
                    None,
                )
                .map_err(|e| falsified_by_blowup(e, e0, linearized_falsified))?;
                Ok(phi_profile(&tr, e0, horizon))
            })
            .collect(),
    )?;
    let (lambda, slow) = fit_rate(&profiles, linearized_falsified)?;
    let mut per_shell = vec![0.0f64; radii.len()];
    for ((j, _), p) in samples.iter().zip(&profiles) {
        per_shell[*j] = per_shell[*j].max(p.sup_weighted(lambda, horizon));
    }
    let (_, worst) = sup_witness(&profiles, lambda, horizon, "largest overshoot |Φ| e^(λt)");
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Radial,
        gain_table: monotone_table(radii, &per_shell, 0.0),
        radius: radii[radii.len() - 1],
        samples: sample_set(samples.into_iter().map(|(_, p)| p).collect(), opts.seed, horizon),
        witnesses: vec![slow, worst],
    })
}

/// Envelope `|Φ(x,t)| <= k̃ e^{-λ̃t}` of the transversally linear system,
/// uniform over `x0` in the box.
pub fn estimate_transverse_linear_decay(
    model: &TransverseModel,
    x_lo: &[f64],
    x_hi: &[f64],
    n_samples: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_positive("horizon", horizon)?;
    check_box(model.n_x(), x_lo, x_hi)?;
    let xs = sampling::in_box(x_lo, x_hi, n_samples, opts.seed);
    let profiles = collect_ordered(
        xs.par_iter()
            .map(|x0| {
                let tr = transverse_linear_flow(model, x0, horizon, &opts.flow, None)
                    .map_err(|e| falsified_by_blowup(e, x0, linearized_falsified))?;
                Ok(phi_profile(&tr, x0, horizon))
            })
            .collect(),
    )?;
    let (lambda, slow) = fit_rate(&profiles, linearized_falsified)?;
    let (k, worst) = sup_witness(&profiles, lambda, horizon, "largest overshoot |Φ| e^(λt)");
    let half_width = norm(&x_lo.iter().zip(x_hi).map(|(a, b)| b - a).collect::<Vec<_>>()) / 2.0;
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Uniform,
        gain_table: vec![GainPoint { s: half_width, k }],
        radius: half_width,
        samples: sample_set(xs, opts.seed, horizon),
        witnesses: vec![slow, worst],
    })
}

/// Envelope of the transverse rows of the full variation,
/// `|∂E/∂(e0, x0)| <= k̃ e^{-λ̃t}`, over `e0` in the ball and `x0` in the box.
///
/// Unlike [`estimate_transverse_linear_decay`] this sees the coupling through
/// `x`: a perturbation of `x0` moves `E` by `e0`-weighted terms that may grow
/// even when every frozen transverse flow decays.
pub fn estimate_transverse_variation(
    model: &TransverseModel,
    e_radius: f64,
    x_lo: &[f64],
    x_hi: &[f64],
    n_samples: usize,
    horizon: f64,
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    check_positive("radius", e_radius)?;
    check_positive("horizon", horizon)?;
    check_box(model.n_x(), x_lo, x_hi)?;
    let n_e = model.n_e();
    let es = sampling::shell(n_e, 0.5 * e_radius, e_radius, n_samples, opts.seed);
    let xs = sampling::in_box(x_lo, x_hi, n_samples, opts.seed.wrapping_add(1));
    let points: Vec<Vec<f64>> = es.iter().zip(&xs).map(|(e, x)| e.iter().chain(x).copied().collect()).collect();
    let full = model.full_system();
    let rows = |tr: &Trajectory, t: f64| spectral_norm(&tr.phi_at(t).unwrap().rows(0, n_e).into_owned());
    let profiles = collect_ordered(
        points
            .par_iter()
            .map(|z0| {
                let tr = crate::dynamics::variational_flow(&full, z0, horizon, &opts.flow)
                    .map_err(|e| falsified_by_blowup(e, z0, linearized_falsified))?;
                let ts = sample_times(&tr, horizon);
                Ok(Profile {
                    point: z0.clone(),
                    scale: 1.0,
                    slope: tail_slope(|t| rows(&tr, t), horizon),
                    norms: ts.iter().map(|t| rows(&tr, *t)).collect(),
                    ts,
                })
            })
            .collect(),
    )?;
    let (lambda, slow) = fit_rate(&profiles, linearized_falsified)?;
    let (k, worst) = sup_witness(&profiles, lambda, horizon, "largest overshoot |∂E/∂(e,x)| e^(λt)");
    Ok(DecayEstimate {
        lambda,
        kind: GainKind::Uniform,
        gain_table: vec![GainPoint { s: e_radius, k }],
        radius: e_radius,
        samples: sample_set(points, opts.seed, horizon),
        witnesses: vec![slow, worst],
    })
}

/// One supremum with the point where it was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supremum {
    pub value: f64,
    pub at: Vec<f64>,
}

impl Supremum {
    fn empty() -> Self {
        Supremum {
            value: 0.0,
            at: vec![],
        }
    }

    fn offer(&mut self, value: f64, at: &[f64]) {
        if value > self.value || self.at.is_empty() {
            self.value = value;
            self.at = at.to_vec();
        }
    }
}

/// Derivative bounds of a transverse model over a sampled domain.
///
/// Second-order terms use the Frobenius norm of the derivative tensor,
/// which dominates the operator norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `sup_x |∂F/∂e(0,x)|`.
    pub mu: Supremum,
    /// `sup_x |∂G/∂x(0,x)|`.
    pub rho: Supremum,
    /// Maximum of the three terms below.
    pub c: f64,
    /// `sup |∂²F/∂e∂e(e,x)|`.
    pub d2f_ee: Supremum,
    /// `sup |∂²F/∂x∂e(e,x)|`.
    pub d2f_xe: Supremum,
    /// `sup |∂G/∂e(e,x)|`.
    pub dg_e: Supremum,
    pub e_radius: f64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

fn bounds_on_box(
    model: &TransverseModel,
    e_radius: f64,
    x_lo: &[f64],
    x_hi: &[f64],
    n: usize,
    seed: u64,
) -> Result<BoundConstants> {
    let (n_e, n_x) = (model.n_e(), model.n_x());
    let xs = sampling::in_box(x_lo, x_hi, n, seed);
    let es = sampling::shell(n_e, 0.0, e_radius, n, seed.wrapping_add(1));
    let zero = vec![0.0; n_e];

    let manifold: Vec<(f64, f64)> = collect_ordered(
        xs.par_iter()
            .map(|x| {
                let (jf, jg) = model.jacobians(&zero, x)?;
                Ok((
                    spectral_norm(&jf.columns(0, n_e).into_owned()),
                    spectral_norm(&jg.columns(n_e, n_x).into_owned()),
                ))
            })
            .collect(),
    )?;
    let mut mu = Supremum::empty();
    let mut rho = Supremum::empty();
    for (x, (m, r)) in xs.iter().zip(&manifold) {
        mu.offer(*m, x);
        rho.offer(*r, x);
    }

    let second: Vec<(f64, f64, f64)> = collect_ordered(
        es.par_iter()
            .zip(&xs)
            .map(|(e, x)| {
                let jets = model.f_jets2(e, x)?;
                let (mut ee, mut xe) = (0.0, 0.0);
                for j in &jets {
                    for a in 0..n_e {
                        for b in 0..n_e {
                            ee += j.hess_at(a, b).powi(2);
                        }
                        for b in 0..n_x {
                            xe += j.hess_at(a, n_e + b).powi(2);
                        }
                    }
                }
                let (_, jg) = model.jacobians(e, x)?;
                let ge = spectral_norm(&jg.columns(0, n_e).into_owned());
                Ok((ee.sqrt(), xe.sqrt(), ge))
            })
            .collect(),
    )?;
    let mut d2f_ee = Supremum::empty();
    let mut d2f_xe = Supremum::empty();
    let mut dg_e = Supremum::empty();
    for ((e, x), (a, b, c)) in es.iter().zip(&xs).zip(&second) {
        let z: Vec<f64> = e.iter().chain(x).copied().collect();
        d2f_ee.offer(*a, &z);
        d2f_xe.offer(*b, &z);
        dg_e.offer(*c, &z);
    }
    Ok(BoundConstants {
        c: d2f_ee.value.max(d2f_xe.value).max(dg_e.value),
        mu,
        rho,
        d2f_ee,
        d2f_xe,
        dg_e,
        e_radius,
        x_lo: x_lo.to_vec(),
        x_hi: x_hi.to_vec(),
        samples: n,
        seed,
    })
}

/// Suprema of the derivative norms used by the transverse propositions over
/// `|e| <= e_radius` and `x` in `[x_lo, x_hi]`.
///
/// The box is also doubled twice about its centre; a bound that grows by
/// 10x or more across those doublings is reported as likely unbounded.
pub fn estimate_bound_constants(
    model: &TransverseModel,
    e_radius: f64,
    x_lo: &[f64],
    x_hi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<BoundConstants> {
    check_positive("radius", e_radius)?;
    check_box(model.n_x(), x_lo, x_hi)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let scaled = |f: f64| -> (Vec<f64>, Vec<f64>) {
        let mid: Vec<f64> = x_lo.iter().zip(x_hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let lo = x_lo.iter().zip(&mid).map(|(a, m)| m + f * (a - m)).collect();
        let hi = x_hi.iter().zip(&mid).map(|(b, m)| m + f * (b - m)).collect();
        (lo, hi)
    };
    let base = bounds_on_box(model, e_radius, x_lo, x_hi, n_samples, seed)?;
    let (lo4, hi4) = scaled(4.0);
    let wide = bounds_on_box(model, e_radius, &lo4, &hi4, n_samples, seed)?;
    let checks = [
        ("mu", base.mu.value, wide.mu.value),
        ("rho", base.rho.value, wide.rho.value),
        ("c", base.c, wide.c),
    ];
    for (name, small, large) in checks {
        if large >= GROWTH_FACTOR * small.max(1e-300) && large > 1e-12 {
            return Err(Error::UnboundedBound(format!(
                "{name} grew from {small:.3e} to {large:.3e} when the x box was doubled twice"
            )));
        }
    }
    Ok(base)
}

/// Replay an envelope on one sample: the largest ratio of `|E|` to
/// `k(|e|) e^{-λt} |e|` on its trajectory.
pub fn envelope_ratio<V: VectorField + ?Sized>(
    model: &V,
    estimate: &DecayEstimate,
    e0: &[f64],
    opts: &FlowOptions,
) -> Result<f64> {
    let horizon = estimate.samples.horizon;
    let tr = flow_signed(model, e0, horizon, opts)?;
    let s = norm(e0);
    let k = estimate
        .gain(s)
        .ok_or_else(|| Error::InvalidArgument(format!("|e0| = {s} outside the gain table")))?;
    Ok(sample_times(&tr, horizon)
        .iter()
        .map(|t| norm(&tr.state_at(*t).unwrap()) / (k * (-estimate.lambda * t).exp() * s))
        .fold(0.0, f64::max))
}

pub(crate) fn jacobian_norm_sup<V: VectorField + ?Sized>(model: &V, radius: f64, n: usize, seed: u64) -> Result<f64> {
    let pts = sampling::shell(model.dim(), 0.0, radius, n, seed);
    let mut pts_with_origin = vec![vec![0.0; model.dim()]];
    pts_with_origin.extend(pts);
    let norms: Vec<f64> = collect_ordered(
        pts_with_origin
            .par_iter()
            .map(|p| model.jacobian(p).map(|j: DMatrix<f64>| spectral_norm(&j)))
            .collect(),
    )?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_system;

    fn opts() -> EstimateOptions {
        EstimateOptions::default()
    }

    #[test]
    fn linear_les() {
        let m = parse_system("dim=1; F1 = -x1").unwrap();
        let est = estimate_les(&m, 1.0, 8, 20.0, &opts()).unwrap();
        assert!((est.lambda - 1.0).abs() < 0.05, "{}", est.lambda);
        assert!((est.gain(1.0).unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn unstable_is_falsified_with_witness() {
        let m = parse_system("dim=1; F1 = x1").unwrap();
        match estimate_les(&m, 1.0, 4, 10.0, &opts()) {
            Err(Error::LesFalsified { witness, .. }) => assert_eq!(witness.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tail_slope_of_exponential() {
        let s = tail_slope(|t| 3.0 * (-2.0 * t).exp(), 10.0);
        assert!((s + 2.0).abs() < 1e-12);
        assert_eq!(tail_slope(|_| 0.0, 10.0), f64::NEG_INFINITY);
    }

    #[test]
    fn table_is_monotone() {
        let t = monotone_table(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0], 1.5);
        let ks: Vec<f64> = t.iter().map(|p| p.k).collect();
        assert_eq!(ks, vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn gain_lookup() {
        let est = DecayEstimate {
            gain_table: vec![GainPoint { s: 1.0, k: 2.0 }, GainPoint { s: 2.0, k: 5.0 }],
            ..DecayEstimate::constant(1.0, 1.0, 2.0)
        };
        assert_eq!(est.gain(0.3), Some(2.0));
        assert_eq!(est.gain(1.0), Some(2.0));
        assert_eq!(est.gain(1.5), Some(5.0));
        assert_eq!(est.gain(2.5), None);
    }
}
