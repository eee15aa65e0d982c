//! Built-in example systems with independent reference solutions.
//!
//! Reference evaluators here deliberately avoid the integrators, quadrature
//! rules and Lyapunov solvers they are used to check: closed forms use their
//! own Newton iterations, integrals use adaptive Simpson quadrature, matrix
//! exponentials use a Taylor scaling-and-squaring and Lyapunov equations a
//! Kronecker-product linear solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an entry's reference values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    ImplicitClosedForm,
    NestedQuadrature,
    LinearAlgebra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    /// System document in the text grammar.
    pub spec: String,
    pub oracle: OracleKind,
    pub params: Vec<(String, f64)>,
    /// Agreement expected between the oracle and integrated flows.
    pub tolerance: f64,
}

pub const SCALAR_EXAMPLE: &str = "scalar-example";
pub const TRANSVERSE_COUNTEREXAMPLE: &str = "transverse-counterexample";

/// `ė = -e / (1 + e²)`.
pub fn scalar_example() -> CatalogEntry {
    CatalogEntry {
        name: SCALAR_EXAMPLE.into(),
        spec: "dim = 1\nF1 = -x1/(1+x1^2)\n".into(),
        oracle: OracleKind::ImplicitClosedForm,
        params: vec![],
        tolerance: 1e-6,
    }
}

/// `ė = -(λ + x sin x) e`, `ẋ = μ x` as a transverse model.
pub fn transverse_counterexample() -> CatalogEntry {
    CatalogEntry {
        name: TRANSVERSE_COUNTEREXAMPLE.into(),
        spec: "dim = 2\ne_dim = 1\nparams: lam = 0.5, mu = 1\nF1 = -(lam + x2*sin(x2))*x1\nG1 = mu*x2\n".into(),
        oracle: OracleKind::ImplicitClosedForm,
        params: vec![("lam".into(), 0.5), ("mu".into(), 1.0)],
        tolerance: 1e-6,
    }
}

/// `ė = A e` from a JSON document `{"A": [[...]], "Q": [[...]]}` (`Q` optional).
pub fn linear_from_json(name: &str, json: &str) -> Result<CatalogEntry> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Doc {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "Q")]
        q: Option<Vec<Vec<f64>>>,
    }
    let doc: Doc = serde_json::from_str(json).map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))?;
    let a = square(&doc.a, "A")?;
    let n = a.nrows();
    let mut spec = format!("dim = {n}\n");
    for i in 0..n {
        let terms: Vec<String> = (0..n).map(|j| format!("({:?})*x{}", a[(i, j)], j + 1)).collect();
        spec.push_str(&format!("F{} = {}\n", i + 1, terms.join(" + ")));
    }
    if let Some(q) = &doc.q {
        let q = square(q, "Q")?;
        if q.nrows() != n {
            return Err(Error::DimensionMismatch("Q and A differ in size".into()));
        }
        let vals: Vec<String> = q.transpose().iter().map(|v| format!("{v:?}")).collect();
        spec.push_str(&format!("Q = [{}]\n", vals.join(", ")));
    }
    Ok(CatalogEntry {
        name: format!("linear:{name}"),
        spec,
        oracle: OracleKind::LinearAlgebra,
        params: vec![],
        tolerance: 1e-8,
    })
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Resolve a system source: a catalog name, `linear:<path>`, or a path to a
/// system document.
pub fn resolve(source: &str) -> Result<CatalogEntry> {
    match source {
        SCALAR_EXAMPLE => Ok(scalar_example()),
        TRANSVERSE_COUNTEREXAMPLE => Ok(transverse_counterexample()),
        _ => {
            if let Some(path) = source.strip_prefix("linear:") {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
                linear_from_json(path, &text)
            } else {
                let text = std::fs::read_to_string(source).map_err(|e| Error::Io(format!("{source}: {e}")))?;
                Ok(CatalogEntry {
                    name: source.into(),
                    spec: text,
                    oracle: OracleKind::NestedQuadrature,
                    params: vec![],
                    tolerance: 1e-6,
                })
            }
        }
    }
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `E(e, t)` of the scalar example from `E² exp(E²) = e² exp(e²) exp(-2t)`.
///
/// With `y = E²` and `u = ln y` the relation is `exp(u) + u = L`; Newton on
/// this convex increasing function, kept inside the bracket
/// `[L - exp(L), L]`, converges from any start.
pub fn scalar_example_oracle(e: f64, t: f64) -> f64 {
    if e == 0.0 {
        return 0.0;
    }
    let target = (e * e).ln() + e * e - 2.0 * t;
    let (mut lo, mut hi) = (target - target.exp(), target);
    let mut u = if target > 1.0 { target.ln() } else { target - target.exp().min(1.0) };
    u = u.clamp(lo, hi);
    for _ in 0..200 {
        let g = u.exp() + u - target;
        if g > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let mut next = u - g / (u.exp() + 1.0);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
            u = next;
            break;
        }
        u = next;
    }
    e.signum() * (0.5 * u).exp()
}

fn scalar_field(e: f64) -> f64 {
    -e / (1.0 + e * e)
}

/// Transition factor `Φ(e, t) = F(E(e,t)) / F(e)` of the scalar example.
pub fn scalar_example_transition(e: f64, t: f64) -> f64 {
    if e == 0.0 {
        return (-t).exp();
    }
    scalar_field(scalar_example_oracle(e, t)) / scalar_field(e)
}

/// `P(e) = ∫₀^∞ Φ(e,s)² q ds` for the scalar example.
pub fn scalar_example_metric(e: f64, q: f64) -> f64 {
    // Φ decays like exp(-s); past s = 60 the integrand is below 1e-50.
    let f = |s: f64| scalar_example_transition(e, s).powi(2) * q;
    [0.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0]
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], 1e-13))
        .sum()
}

/// Riemannian distance to the origin in one dimension: `∫₀^e √P(σ) dσ`.
pub fn scalar_example_distance(e: f64, q: f64) -> f64 {
    let f = |s: f64| scalar_example_metric(s, q).sqrt();
    adaptive_simpson(&f, 0.0, e.abs(), 1e-10)
}

/// State and first variation of the planar counterexample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleState {
    pub e: f64,
    pub x: f64,
    pub de: f64,
    pub dx: f64,
}

/// Closed-form solution of `ė = -(λ + x sin x) e`, `ẋ = μ x` and its
/// variation in direction `(δe0, δx0)`.
///
/// With `X = x0 e^{μt}`, `∫₀ᵗ X sin X ds = (cos x0 - cos X)/μ`, so
/// `E = exp(-λt + (cos X - cos x0)/μ) e0`.
#[allow(clippy::too_many_arguments)]
pub fn counterexample_oracle(
    e0: f64,
    x0: f64,
    t: f64,
    lambda: f64,
    mu: f64,
    de0: f64,
    dx0: f64,
) -> CounterexampleState {
    if mu == 0.0 {
        let rate = lambda + x0 * x0.sin();
        let phi = (-rate * t).exp();
        let drate = x0.sin() + x0 * x0.cos();
        return CounterexampleState {
            e: phi * e0,
            x: x0,
            de: phi * de0 - t * drate * phi * e0 * dx0,
            dx: dx0,
        };
    }
    let growth = (mu * t).exp();
    let x = x0 * growth;
    let phi = transverse_counterexample_transition(x0, t, lambda, mu);
    let e = phi * e0;
    let de = phi * de0 + e * (x0.sin() - growth * x.sin()) / mu * dx0;
    CounterexampleState {
        e,
        x,
        de,
        dx: growth * dx0,
    }
}

/// Transverse transition factor `exp(-λt + (cos(x0 e^{μt}) - cos x0)/μ)`.
pub fn transverse_counterexample_transition(x0: f64, t: f64, lambda: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return (-(lambda + x0 * x0.sin()) * t).exp();
    }
    let x = x0 * (mu * t).exp();
    (-lambda * t + (x.cos() - x0.cos()) / mu).exp()
}

/// Exact references for `ė = A e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Solution of `AᵀP + PA = -Q` by a dense Kronecker solve.
    pub p: DMatrix<f64>,
}

impl LinearBaseline {
    /// `exp(A t)`.
    pub fn transition(&self, t: f64) -> DMatrix<f64> {
        expm(&(&self.a * t))
    }

    pub fn flow(&self, e0: &[f64], t: f64) -> Vec<f64> {
        (self.transition(t) * DVector::from_column_slice(e0)).iter().copied().collect()
    }
}

/// `P` and the exact flow of a Hurwitz linear system.
pub fn linear_baseline(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LinearBaseline> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::DimensionMismatch("A and Q must be square of equal size".into()));
    }
    let abscissa = if n == 1 {
        a[(0, 0)]
    } else {
        a.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    };
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz { abscissa });
    }
    // Column-major vec: vec(AᵀP) = (I ⊗ Aᵀ) vec(P), vec(PA) = (Aᵀ ⊗ I) vec(P).
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(LinearBaseline {
        a: a.clone(),
        q: q.clone(),
        p: (&p + p.transpose()) * 0.5,
    })
}

/// Matrix exponential by Taylor series with scaling and squaring.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm1 = (0..m.ncols()).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let n = m.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() < 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_oracle_values() {
        assert_eq!(scalar_example_oracle(0.0, 3.0), 0.0);
        assert!((scalar_example_oracle(1.0, 0.0) - 1.0).abs() < 1e-14);
        let e = scalar_example_oracle(1.0, 1.0);
        let y = e * e;
        assert!((y * y.exp() - (-1f64).exp()).abs() < 1e-12);
        assert!((y - 0.278_464_542_761_074).abs() < 1e-9);
        assert!((e - 0.527_697_397).abs() < 1e-8);
        assert!((scalar_example_oracle(-1.0, 1.0) + e).abs() < 1e-15);
        // Far tail: E ≈ e exp(e²/2) exp(-t).
        let far = scalar_example_oracle(2.0, 40.0);
        assert!((far / (2.0 * 2f64.exp() * (-40f64).exp()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_accuracy() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_metric_is_one_half() {
        assert!((scalar_example_metric(0.0, 1.0) - 0.5).abs() < 1e-10);
        let b = linear_baseline(&DMatrix::from_element(1, 1, -1.0), &DMatrix::identity(1, 1)).unwrap();
        assert!((b.p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kronecker_solution_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let b = linear_baseline(&a, &q).unwrap();
        let r = a.transpose() * &b.p + &b.p * &a + &q;
        assert!(r.amax() <= 1e-12);
    }

    #[test]
    fn expm_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        let e = expm(&m);
        assert!((e[(0, 0)] - 3f64.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - 3f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn counterexample_variation_by_finite_difference() {
        let (lam, mu, t) = (0.5, 1.0, 1.3);
        let s = counterexample_oracle(1.0, 1.0, t, lam, mu, 0.0, 1.0);
        let h = 1e-6;
        let plus = counterexample_oracle(1.0, 1.0 + h, t, lam, mu, 0.0, 0.0).e;
        let minus = counterexample_oracle(1.0, 1.0 - h, t, lam, mu, 0.0, 0.0).e;
        assert!((s.de - (plus - minus) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn counterexample_transition_by_quadrature() {
        for (x0, t, lam, mu) in [(1.0, 3.0, 1.0, 1.0), (-0.7, 2.0, 0.5, 1.0), (2.5, 1.5, 2.0, 0.5)] {
            let rate = |s: f64| {
                let x: f64 = x0 * (mu * s).exp();
                x * x.sin()
            };
            let expected = (-lam * t - adaptive_simpson(&rate, 0.0, t, 1e-13)).exp();
            let closed = transverse_counterexample_transition(x0, t, lam, mu);
            assert!((closed - expected).abs() <= 1e-10 * expected, "{x0} {t}: {closed} vs {expected}");
        }
    }

    #[test]
    fn counterexample_overshoot_depends_on_x0() {
        let (lam, mu) = (0.5, 1.0);
        let overshoot = |x0: f64, t: f64| transverse_counterexample_transition(x0, t, lam, mu) * (lam * t).exp();
        let at_one = ((1f64.cos() + 1.0) / mu).exp();
        for i in 0..=400 {
            let t = i as f64 * 0.01;
            assert!(overshoot(1.0, t) <= at_one * (1.0 + 1e-12));
            for j in 0..=60 {
                let x0 = -6.0 + j as f64 * 0.2;
                assert!(overshoot(x0, t) <= (2.0 / mu).exp() * (1.0 + 1e-12));
            }
        }
        // x0 = π reaches cos X = 1 at X = 2π, past the x0 = 1 constant.
        let worst = overshoot(std::f64::consts::PI, 2f64.ln() / mu);
        assert!((worst - (2.0 / mu).exp()).abs() < 1e-12);
        assert!(worst > at_one);
    }

    #[test]
    fn linear_json() {
        let entry = linear_from_json("m.json", r#"{"A": [[-1, 1], [0, -2]]}"#).unwrap();
        assert!(entry.spec.contains("F2 = (0.0)*x1 + (-2.0)*x2"));
        assert!(linear_from_json("bad", r#"{"A": [[1, 2]]}"#).is_err());
    }
}
