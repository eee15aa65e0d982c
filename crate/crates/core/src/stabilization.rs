//! Controllers `u = -λ U(w)` for `ẇ = f(w) + g(w) u` when `g` is a Killing
//! field of the metric and `∂U/∂w = (P g)ᵀ`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemModel, VectorField};
use crate::error::{Error, Result};
use crate::expr::{ExprTree, Jet2, SystemSpec};
use crate::linalg::{max_eigenvalue, spectral_norm, symmetrize, vec_norm};
use crate::metric::{flow_derivative, rows, MetricField};
use crate::quadrature::gauss_legendre;
use crate::sampling;

/// `ẇ = f(w) + g(w) u` with scalar `u`. When a scaling `α` is given, the
/// input field is `α(w) g(w)` throughout.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub drift: SystemModel,
    pub input: SystemModel,
}

impl ControlSystem {
    pub fn new(drift: SystemModel, input: Vec<ExprTree>, alpha: Option<ExprTree>) -> Result<Self> {
        let n = drift.dim();
        if input.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "input field has {} components but the drift has {n}",
                input.len()
            )));
        }
        let input = match alpha {
            Some(a) => input.iter().map(|g| a.product(g)).collect::<Result<Vec<_>>>()?,
            None => input,
        };
        Ok(ControlSystem {
            drift,
            input: SystemModel::from_exprs(input)?,
        })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        if spec.control.is_empty() {
            return Err(Error::InvalidArgument("document has no control field (g1, g2, ...)".into()));
        }
        ControlSystem::new(
            SystemModel::from_exprs(spec.f.clone())?,
            spec.control.clone(),
            spec.alpha.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizeOptions {
    /// Bound on the Killing and matrix-inequality residuals.
    pub tolerance: f64,
    /// Bound on the antisymmetrized derivative of `P g`.
    pub closedness_tolerance: f64,
    /// Step of the flow-aligned differences.
    pub h: f64,
}

impl Default for StabilizeOptions {
    fn default() -> Self {
        StabilizeOptions {
            tolerance: 1e-8,
            closedness_tolerance: 1e-6,
            h: 1e-4,
        }
    }
}

/// `L_g P = d_g P + P ∂g + ∂gᵀ P` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillingResidual {
    pub point: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    /// Spectral norm of the matrix.
    pub norm: f64,
    /// Gap between the `h` and `h/2` difference quotients of `d_g P`.
    pub disagreement: f64,
}

fn lie_derivative<M, D>(metric: &M, field: &D, w: &[f64], h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)>
where
    M: MetricField + ?Sized,
    D: VectorField + ?Sized,
{
    let (dp, p, disagreement) = flow_derivative(metric, field, w, h)?;
    let j = field.jacobian(w)?;
    Ok((symmetrize(&(dp + &p * &j + j.transpose() * &p)), p, disagreement))
}

fn check_field<M: MetricField + ?Sized>(metric: &M, sys: &ControlSystem, w: &[f64]) -> Result<()> {
    let n = sys.dim();
    if metric.dim() != n || metric.point_dim() != n || w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "metric of size {}, system of dimension {n} and point of dimension {} disagree",
            metric.dim(),
            w.len()
        )));
    }
    Ok(())
}

pub fn killing_residual<M: MetricField + ?Sized>(
    metric: &M,
    sys: &ControlSystem,
    w: &[f64],
    h: f64,
) -> Result<KillingResidual> {
    check_field(metric, sys, w)?;
    let (k, _, disagreement) = lie_derivative(metric, &sys.input, w, h)?;
    Ok(KillingResidual {
        point: w.to_vec(),
        norm: spectral_norm(&k),
        matrix: rows(&k),
        disagreement,
    })
}

/// `P(w) g(w)`, optionally with a fixed truncation horizon.
fn one_form<M: MetricField + ?Sized>(
    metric: &M,
    sys: &ControlSystem,
    w: &[f64],
    horizon: Option<f64>,
) -> Result<DVector<f64>> {
    Ok(metric.eval_truncated(w, horizon)? * sys.input.eval_vec(w)?)
}

/// `max_{i<j} |∂ᵢωⱼ - ∂ⱼωᵢ|` for `ω = P g`, by central differences.
pub fn closedness_residual<M: MetricField + ?Sized>(metric: &M, sys: &ControlSystem, w: &[f64]) -> Result<f64> {
    check_field(metric, sys, w)?;
    let n = w.len();
    let horizon = metric.horizon(w)?;
    let h = 1e-4 * (1.0 + vec_norm(w));
    let mut d = DMatrix::zeros(n, n);
    let mut x = w.to_vec();
    for i in 0..n {
        x[i] = w[i] + h;
        let plus = one_form(metric, sys, &x, horizon)?;
        x[i] = w[i] - h;
        let minus = one_form(metric, sys, &x, horizon)?;
        x[i] = w[i];
        d.set_row(i, &((plus - minus) / (2.0 * h)).transpose());
    }
    Ok((&d - d.transpose()).amax())
}

/// Sup of [`closedness_residual`] over `samples`; fails with the worst
/// point when it exceeds `tolerance`.
pub fn check_closedness<M: MetricField + ?Sized>(
    metric: &M,
    sys: &ControlSystem,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<f64> {
    let residuals = samples
        .par_iter()
        .map(|w| closedness_residual(metric, sys, w))
        .collect::<Result<Vec<f64>>>()?;
    let (worst, sup) = residuals
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(k, m), (i, r)| if *r > m { (i, *r) } else { (k, m) });
    if sup > tolerance {
        return Err(Error::NotIntegrable {
            witness: samples[worst].clone(),
            residual: sup,
        });
    }
    Ok(sup)
}

/// `∫ ω` along the polyline through `path`, refined by panel doubling.
pub fn line_integral<M: MetricField + ?Sized>(metric: &M, sys: &ControlSystem, path: &[Vec<f64>]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidArgument("a path needs at least two points".into()));
    }
    let mut total = 0.0;
    for seg in path.windows(2) {
        check_field(metric, sys, &seg[0])?;
        check_field(metric, sys, &seg[1])?;
        let (a, b) = (&seg[0], &seg[1]);
        let d = DVector::from_iterator(a.len(), b.iter().zip(a).map(|(x, y)| x - y));
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        let panel_sum = |panels: usize| -> Result<f64> {
            let width = 1.0 / panels as f64;
            let mut s = 0.0;
            for k in 0..panels {
                for (tau, wt) in gauss_legendre(k as f64 * width, (k + 1) as f64 * width) {
                    let x: Vec<f64> = a.iter().zip(d.iter()).map(|(ai, di)| ai + tau * di).collect();
                    s += wt * one_form(metric, sys, &x, None)?.dot(&d);
                }
            }
            Ok(s)
        };
        let mut panels = 1;
        let mut prev = panel_sum(panels)?;
        while panels < 1024 {
            panels *= 2;
            let next = panel_sum(panels)?;
            let done = (next - prev).abs() <= 1e-12 * (1.0 + next.abs());
            prev = next;
            if done {
                break;
            }
        }
        total += prev;
    }
    Ok(total)
}

/// `U(w) = ∫ ω` along the segment from `w0` to `w`, so `U(w0) = 0`.
pub fn construct_u<M: MetricField + ?Sized>(metric: &M, sys: &ControlSystem, w: &[f64], w0: &[f64]) -> Result<f64> {
    line_integral(metric, sys, &[w0.to_vec(), w.to_vec()])
}

/// `F(w) = f(w) - λ g(w) U(w)` with `U(0) = 0`.
pub struct ClosedLoop<'a, M: ?Sized> {
    sys: &'a ControlSystem,
    metric: &'a M,
    lambda: f64,
}

impl<'a, M: MetricField + ?Sized> ClosedLoop<'a, M> {
    pub fn new(sys: &'a ControlSystem, metric: &'a M, lambda: f64) -> Self {
        ClosedLoop { sys, metric, lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `U(w)` from the origin.
    pub fn potential(&self, w: &[f64]) -> Result<f64> {
        construct_u(self.metric, self.sys, w, &vec![0.0; w.len()])
    }

    /// The feedback `u = -λ U(w)`.
    pub fn control(&self, w: &[f64]) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(-self.lambda * self.potential(w)?)
    }
}

impl<M: MetricField + ?Sized> VectorField for ClosedLoop<'_, M> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn eval(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        self.sys.drift.eval(w, out)?;
        if self.lambda != 0.0 {
            let u = self.control(w)?;
            let g = self.sys.input.eval_vec(w)?;
            for (o, gi) in out.iter_mut().zip(g.iter()) {
                *o += gi * u;
            }
        }
        Ok(())
    }

    /// `∂f - λ (∂g U + g (P g)ᵀ)`.
    fn jacobian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = self.sys.drift.jacobian(w)?;
        if self.lambda != 0.0 {
            let g = self.sys.input.eval_vec(w)?;
            let omega = one_form(self.metric, self.sys, w, None)?;
            j -= (self.sys.input.jacobian(w)? * self.potential(w)? + &g * omega.transpose()) * self.lambda;
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerCertificate {
    pub lambda: f64,
    pub tolerance: f64,
    pub closedness_tolerance: f64,
    pub samples: usize,
    /// Sup of `|L_g P|`.
    pub killing: f64,
    /// Sup of the antisymmetrized derivative of `P g`.
    pub integrability: f64,
    /// Sup of the largest eigenvalue of `L_f P - λ (Pg)(Pg)ᵀ + Q`.
    pub inequality: f64,
    /// Sup of the largest eigenvalue of `L_F P + Q` on the closed loop.
    pub closed_loop: Option<f64>,
    /// Sup of `|L_F P - (L_f P - λ U L_g P - 2λ (Pg)(Pg)ᵀ)|`.
    pub identity_gap: Option<f64>,
    pub witness: Option<Vec<f64>>,
    /// "pass" iff the three hypothesis residuals are within tolerance.
    pub verdict: String,
    /// "pass" iff `L_F P ⪯ -Q` (within tolerance) on every sample.
    pub closed_loop_verdict: Option<String>,
}

impl ControllerCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }

    /// Failing hypotheses, numbered as: 1 the matrix inequality, 2 the
    /// Killing condition, 3 integrability.
    pub fn failures(&self) -> Vec<(u8, String)> {
        let mut out = Vec::new();
        if !(self.inequality <= self.tolerance) {
            out.push((1, format!("max eig of L_f P - λ(Pg)(Pg)ᵀ + Q is {:.3e}", self.inequality)));
        }
        if !(self.killing <= self.tolerance) {
            out.push((2, format!("|L_g P| reaches {:.3e}; g is not a Killing field", self.killing)));
        }
        if !(self.integrability <= self.closedness_tolerance) {
            out.push((3, format!("closedness residual of P g reaches {:.3e}", self.integrability)));
        }
        out
    }
}

struct SampleResidual {
    killing: f64,
    killing_matrix: DMatrix<f64>,
    integrability: f64,
    inequality: f64,
    lf: DMatrix<f64>,
    pg: DVector<f64>,
}

fn sample_residual<M: MetricField + ?Sized>(
    metric: &M,
    sys: &ControlSystem,
    lambda: f64,
    w: &[f64],
    h: f64,
) -> Result<SampleResidual> {
    let (k, _, _) = lie_derivative(metric, &sys.input, w, h)?;
    let integrability = closedness_residual(metric, sys, w)?;
    let (lf, p, _) = lie_derivative(metric, &sys.drift, w, h)?;
    let pg = &p * sys.input.eval_vec(w)?;
    let inequality = max_eigenvalue(&(&lf - &pg * pg.transpose() * lambda + metric.q()));
    Ok(SampleResidual {
        killing: spectral_norm(&k),
        killing_matrix: k,
        integrability,
        inequality,
        lf,
        pg,
    })
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(k, m), (i, v)| if v > m || v.is_nan() { (i, v) } else { (k, m) })
}

/// Check the three hypotheses on `samples` and, when they hold, replay the
/// closed-loop inequality and the identity
/// `L_F P = L_f P - λ U L_g P - 2λ (Pg)(Pg)ᵀ`.
pub fn certify_controller<M: MetricField + ?Sized>(
    sys: &ControlSystem,
    metric: &M,
    lambda: f64,
    samples: &[Vec<f64>],
    opts: &StabilizeOptions,
) -> Result<ControllerCertificate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("gain {lambda} must be finite and >= 0")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    for w in samples {
        check_field(metric, sys, w)?;
    }
    let per: Vec<SampleResidual> = samples
        .par_iter()
        .map(|w| sample_residual(metric, sys, lambda, w, opts.h))
        .collect::<Result<_>>()?;
    let (ki, killing) = argmax(per.iter().map(|r| r.killing));
    let (ii, integrability) = argmax(per.iter().map(|r| r.integrability));
    let (qi, inequality) = argmax(per.iter().map(|r| r.inequality));
    let mut cert = ControllerCertificate {
        lambda,
        tolerance: opts.tolerance,
        closedness_tolerance: opts.closedness_tolerance,
        samples: samples.len(),
        killing,
        integrability,
        inequality,
        closed_loop: None,
        identity_gap: None,
        witness: None,
        verdict: String::new(),
        closed_loop_verdict: None,
    };
    let failures = cert.failures();
    if let Some((c, _)) = failures.first() {
        cert.verdict = "fail".into();
        cert.witness = Some(samples[[qi, ki, ii][*c as usize - 1]].clone());
        return Ok(cert);
    }
    cert.verdict = "pass".into();
    let closed = ClosedLoop::new(sys, metric, lambda);
    let replay = samples
        .par_iter()
        .zip(&per)
        .map(|(w, r)| {
            let (lf_closed, _, _) = lie_derivative(metric, &closed, w, opts.h)?;
            let u = closed.potential(w)?;
            let predicted = &r.lf - &r.killing_matrix * (lambda * u) - &r.pg * r.pg.transpose() * (2.0 * lambda);
            Ok((max_eigenvalue(&(&lf_closed + metric.q())), (lf_closed - predicted).amax()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (ci, worst) = argmax(replay.iter().map(|r| r.0));
    cert.closed_loop = Some(worst);
    cert.identity_gap = Some(replay.iter().map(|r| r.1).fold(0.0, f64::max));
    let ok = worst <= opts.tolerance;
    if !ok {
        cert.witness = Some(samples[ci].clone());
    }
    cert.closed_loop_verdict = Some(if ok { "pass" } else { "fail" }.into());
    Ok(cert)
}

/// Certify and, if every hypothesis holds, return the closed loop.
pub fn synthesize_controller<'a, M: MetricField + ?Sized>(
    sys: &'a ControlSystem,
    metric: &'a M,
    lambda: f64,
    samples: &[Vec<f64>],
    opts: &StabilizeOptions,
) -> Result<(ClosedLoop<'a, M>, ControllerCertificate)> {
    let cert = certify_controller(sys, metric, lambda, samples, opts)?;
    if let Some((condition, detail)) = cert.failures().into_iter().next() {
        let at = cert.witness.as_ref().map(|w| format!(" at {w:?}")).unwrap_or_default();
        return Err(Error::HypothesisFailed {
            condition,
            detail: format!("{detail}{at}"),
        });
    }
    Ok((ClosedLoop::new(sys, metric, lambda), cert))
}

/// True when every input component has a vanishing Hessian at the origin
/// and at `probes` points of `[-1, 1]ⁿ` (an affine input field).
fn input_is_affine(sys: &ControlSystem, probes: usize) -> Result<bool> {
    let n = sys.dim();
    let mut points = vec![vec![0.0; n]];
    points.extend(
        sampling::halton(n, probes, 0)
            .into_iter()
            .map(|p| p.into_iter().map(|u| 2.0 * u - 1.0).collect()),
    );
    for p in &points {
        let jets: Vec<Jet2> = sys.input.jets2(p)?;
        if jets.iter().any(|j| j.hess.iter().any(|v| *v != 0.0)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The closed loop as a system document when `P` is constant and `g` is
/// affine, so that `U(w) = bᵀP w + ½ wᵀ P G w` with `g = G w + b`.
/// Returns `None` when `U` has no such closed form.
pub fn closed_loop_spec(sys: &ControlSystem, p: &DMatrix<f64>, q: &DMatrix<f64>, lambda: f64) -> Result<Option<String>> {
    let n = sys.dim();
    if p.nrows() != n || !input_is_affine(sys, 16)? {
        return Ok(None);
    }
    let origin = vec![0.0; n];
    let c = p * sys.input.eval_vec(&origin)?;
    let m = p * sys.input.jacobian(&origin)?;
    let mut terms = Vec::new();
    for j in 0..n {
        if c[j] != 0.0 {
            terms.push(format!("({:?})*x{}", c[j], j + 1));
        }
        for k in 0..n {
            if m[(j, k)] != 0.0 {
                terms.push(format!("({:?})*x{}*x{}", 0.5 * m[(j, k)], j + 1, k + 1));
            }
        }
    }
    let u = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
    let mut text = String::new();
    writeln!(text, "dim = {n}").unwrap();
    let params = sys.drift.exprs()[0].params();
    if !params.names.is_empty() {
        let items: Vec<String> = params.names.iter().zip(&params.values).map(|(k, v)| format!("{k} = {v:?}")).collect();
        writeln!(text, "params: {}", items.join(", ")).unwrap();
    }
    for i in 0..n {
        writeln!(
            text,
            "F{} = ({}) - ({lambda:?})*({})*({u})",
            i + 1,
            sys.drift.exprs()[i],
            sys.input.exprs()[i]
        )
        .unwrap();
    }
    let matrix = |name: &str, a: &DMatrix<f64>| -> String {
        let items: Vec<String> = rows(a).into_iter().flatten().map(|v| format!("{v:?}")).collect();
        format!("{name} = [{}]\n", items.join(", "))
    };
    text.push_str(&matrix("Q", q));
    text.push_str(&matrix("P", p));
    // The document must read back.
    SystemSpec::parse(&text)?;
    Ok(Some(text))
}

/// `U` sampled on a regular grid over a box, for multilinear interpolation.
///
/// `values` is row-major with the last coordinate varying fastest; axis `i`
/// has `shape[i]` equally spaced nodes from `lo[i]` to `hi[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPotential {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
    pub interpolation: String,
    pub values: Vec<f64>,
}

impl TabulatedPotential {
    fn node(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        let mut x = vec![0.0; self.shape.len()];
        for i in (0..self.shape.len()).rev() {
            let k = rest % self.shape[i];
            rest /= self.shape[i];
            x[i] = self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (self.shape[i] - 1) as f64;
        }
        x
    }

    /// Multilinear interpolation; `None` outside the box.
    pub fn eval(&self, w: &[f64]) -> Option<f64> {
        let n = self.shape.len();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for i in 0..n {
            let t = (w[i] - self.lo[i]) / (self.hi[i] - self.lo[i]) * (self.shape[i] - 1) as f64;
            if !(t >= 0.0 && t <= (self.shape[i] - 1) as f64) {
                return None;
            }
            base[i] = (t.floor() as usize).min(self.shape[i] - 2);
            frac[i] = t - base[i] as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut flat = 0;
            for i in 0..n {
                let bit = (corner >> i) & 1;
                weight *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
                flat = flat * self.shape[i] + base[i] + bit;
            }
            total += weight * self.values[flat];
        }
        Some(total)
    }
}

pub fn tabulate_potential<M: MetricField + ?Sized>(
    metric: &M,
    sys: &ControlSystem,
    lo: &[f64],
    hi: &[f64],
    shape: &[usize],
) -> Result<TabulatedPotential> {
    let n = sys.dim();
    if lo.len() != n || hi.len() != n || shape.len() != n {
        return Err(Error::DimensionMismatch("grid box and shape must match the system dimension".into()));
    }
    if shape.iter().any(|s| *s < 2) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidArgument("grid needs at least two nodes per axis and lo < hi".into()));
    }
    let mut table = TabulatedPotential {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        shape: shape.to_vec(),
        interpolation: "multilinear".into(),
        values: Vec::new(),
    };
    let total: usize = shape.iter().product();
    let origin = vec![0.0; n];
    table.values = (0..total)
        .into_par_iter()
        .map(|k| construct_u(metric, sys, &table.node(k), &origin))
        .collect::<Result<_>>()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{ConstantMetric, FnMetric};

    fn scalar(f: &str, g: &str) -> ControlSystem {
        ControlSystem::from_spec(&SystemSpec::parse(&format!("dim=1; F1 = {f}; g1 = {g}")).unwrap()).unwrap()
    }

    fn unit() -> ConstantMetric {
        ConstantMetric::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn killing_examples() {
        let m = unit();
        assert_eq!(killing_residual(&m, &scalar("x1", "1"), &[0.7], 1e-4).unwrap().norm, 0.0);
        let r = killing_residual(&m, &scalar("x1", "x1"), &[0.7], 1e-4).unwrap();
        assert!((r.norm - 2.0).abs() < 1e-12);

        // g = A w with A skew and P = I.
        let spec = SystemSpec::parse("dim=2; F1 = -x1; F2 = -x2; g1 = -x2; g2 = x1").unwrap();
        let sys = ControlSystem::from_spec(&spec).unwrap();
        let m2 = ConstantMetric::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(killing_residual(&m2, &sys, &[0.3, -0.4], 1e-4).unwrap().norm <= 1e-8);
    }

    #[test]
    fn potential_for_constant_data() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = ConstantMetric::new(p.clone(), DMatrix::identity(2, 2)).unwrap();
        let sys = ControlSystem::from_spec(&SystemSpec::parse("dim=2; F1=-x1; F2=-x2; g1 = 1; g2 = -2").unwrap())
            .unwrap();
        let (w, w0) = ([0.4, 1.1], [-0.2, 0.3]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let d = DVector::from_vec(vec![w[0] - w0[0], w[1] - w0[1]]);
        let exact = b.dot(&(&p * d));
        assert!((construct_u(&m, &sys, &w, &w0).unwrap() - exact).abs() < 1e-12);
        assert_eq!(construct_u(&m, &sys, &w0, &w0).unwrap(), 0.0);
    }

    #[test]
    fn scalar_potential_and_path_independence() {
        // p(σ) = 1 + σ², g(σ) = cos σ: U(w) = sin w + w² sin w + 2w cos w - 2 sin w.
        let m = FnMetric::new(1, |e: &[f64]| DMatrix::from_element(1, 1, 1.0 + e[0] * e[0]));
        let sys = scalar("-x1", "cos(x1)");
        let w = 1.3f64;
        let exact = w.sin() + w * w * w.sin() + 2.0 * w * w.cos() - 2.0 * w.sin();
        assert!((construct_u(&m, &sys, &[w], &[0.0]).unwrap() - exact).abs() < 1e-10);

        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let m2 = ConstantMetric::new(p, DMatrix::identity(2, 2)).unwrap();
        // P G symmetric: G = [[1, 1], [2, 0]] with P = diag(2, 1) gives [[2, 2], [2, 0]].
        let spec = SystemSpec::parse("dim=2; F1=-x1; F2=-x2; g1 = x1 + x2 + 1; g2 = 2*x1").unwrap();
        let sys2 = ControlSystem::from_spec(&spec).unwrap();
        assert!(check_closedness(&m2, &sys2, &[vec![0.2, 0.5], vec![-1.0, 2.0]], 1e-6).unwrap() < 1e-8);
        let direct = line_integral(&m2, &sys2, &[vec![0.0, 0.0], vec![1.0, -0.5]]).unwrap();
        let bent = line_integral(&m2, &sys2, &[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, -0.5]]).unwrap();
        assert!((direct - bent).abs() < 1e-6);
    }

    #[test]
    fn nonclosed_form_is_rejected() {
        let m = ConstantMetric::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let spec = SystemSpec::parse("dim=2; F1=-x1; F2=-x2; g1 = -x2; g2 = x1").unwrap();
        let sys = ControlSystem::from_spec(&spec).unwrap();
        match check_closedness(&m, &sys, &[vec![0.5, 0.5]], 1e-6) {
            Err(Error::NotIntegrable { witness, residual }) => {
                assert_eq!(witness, vec![0.5, 0.5]);
                assert!((residual - 2.0).abs() < 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_plant() {
        let m = unit();
        let sys = scalar("x1", "1");
        let samples: Vec<Vec<f64>> = [-2.0, -0.5, 0.3, 1.0, 2.5].iter().map(|w| vec![*w]).collect();
        let (closed, cert) = synthesize_controller(&sys, &m, 3.0, &samples, &StabilizeOptions::default()).unwrap();
        assert!(cert.passed());
        assert_eq!(cert.closed_loop_verdict.as_deref(), Some("pass"));
        assert!(cert.identity_gap.unwrap() <= 1e-8);
        assert!((closed.eval_vec(&[1.5]).unwrap()[0] + 3.0).abs() < 1e-12);
        assert!((closed.jacobian(&[1.5]).unwrap()[(0, 0)] + 2.0).abs() < 1e-12);
        // L_F P + Q = -4 + 1.
        assert!((cert.closed_loop.unwrap() + 3.0).abs() < 1e-9);

        let weak = certify_controller(&sys, &m, 1.0, &samples, &StabilizeOptions::default()).unwrap();
        assert_eq!(weak.failures()[0].0, 1);
        assert!(matches!(
            synthesize_controller(&sys, &m, 1.0, &samples, &StabilizeOptions::default()),
            Err(Error::HypothesisFailed { condition: 1, .. })
        ));
        let not_killing = scalar("-x1", "x1");
        assert!(matches!(
            synthesize_controller(&not_killing, &m, 3.0, &samples, &StabilizeOptions::default()),
            Err(Error::HypothesisFailed { condition: 2, .. })
        ));
    }

    #[test]
    fn zero_gain_is_the_drift() {
        let m = unit();
        let sys = scalar("-x1", "1");
        let (closed, cert) =
            synthesize_controller(&sys, &m, 0.0, &[vec![0.5], vec![-1.0]], &StabilizeOptions::default()).unwrap();
        assert!(cert.passed());
        for w in [-2.0, 0.1, 3.0] {
            assert_eq!(closed.eval_vec(&[w]).unwrap(), sys.drift.eval_vec(&[w]).unwrap());
        }
    }

    #[test]
    fn linear_plant_with_gramian() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let q = DMatrix::identity(2, 2);
        let p = crate::metric::lyapunov_gramian(&a, &q).unwrap();
        let spec = SystemSpec::parse("dim=2; F1 = x2; F2 = -2*x1 - 3*x2; g1 = 0; g2 = 1").unwrap();
        let sys = ControlSystem::from_spec(&spec).unwrap();
        let m = ConstantMetric::new(p.clone(), q.clone()).unwrap();
        let samples = sampling::in_box(&[-1.0, -1.0], &[1.0, 1.0], 12, 0);
        let opts = StabilizeOptions {
            tolerance: 1e-6,
            ..Default::default()
        };
        let (closed, cert) = synthesize_controller(&sys, &m, 2.0, &samples, &opts).unwrap();
        assert!(cert.closed_loop.unwrap() <= 1e-6);

        let text = closed_loop_spec(&sys, &p, &q, 2.0).unwrap().unwrap();
        let reparsed = crate::expr::parse_system(&text).unwrap();
        for w in &samples {
            let d = reparsed.eval_vec(w).unwrap() - closed.eval_vec(w).unwrap();
            assert!(d.amax() < 1e-8, "{text}");
        }
    }

    #[test]
    fn tabulated_potential_interpolates() {
        let m = FnMetric::new(1, |e: &[f64]| DMatrix::from_element(1, 1, 1.0 + e[0] * e[0]));
        let sys = scalar("-x1", "1");
        assert_eq!(closed_loop_spec(&sys, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1), 1.0).unwrap(), None);
        let table = tabulate_potential(&m, &sys, &[-1.0], &[1.0], &[201]).unwrap();
        let w = 0.37f64;
        let exact = w + w.powi(3) / 3.0;
        assert!((table.eval(&[w]).unwrap() - exact).abs() < 1e-4);
        assert_eq!(table.eval(&[1.5]), None);
    }
}
