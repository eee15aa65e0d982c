use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{seed, Dual, ExprTree, Jet2, SystemSpec};

/// Differentiability class advertised by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Smoothness {
    C1,
    C2,
    C3,
    C4,
}

/// An autonomous vector field with a Jacobian available at every point.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    fn eval_vec(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.eval(x, out.as_mut_slice())?;
        Ok(out)
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval(x, out)
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        (**self).jacobian(x)
    }
    fn smoothness(&self) -> Smoothness {
        (**self).smoothness()
    }
}

fn check_dim(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {} but the field expects {n}",
            x.len()
        )));
    }
    Ok(())
}

/// One forward pass per column with [`Dual`] numbers; for the small
/// dimensions here this beats gradient jets, which allocate at every node.
fn jacobian_of(exprs: &[ExprTree], x: &[f64]) -> Result<DMatrix<f64>> {
    let mut vars: Vec<Dual> = x.iter().map(|&v| Dual { value: v, deriv: 0.0 }).collect();
    let mut jac = DMatrix::zeros(exprs.len(), x.len());
    for k in 0..x.len() {
        vars[k].deriv = 1.0;
        for (i, e) in exprs.iter().enumerate() {
            jac[(i, k)] = e.eval_with(&vars)?.deriv;
        }
        vars[k].deriv = 0.0;
    }
    Ok(jac)
}

/// A vector field given by one expression per component.
#[derive(Debug, Clone)]
pub struct SystemModel {
    exprs: Vec<ExprTree>,
    smoothness: Smoothness,
}

impl SystemModel {
    pub fn from_exprs(exprs: Vec<ExprTree>) -> Result<Self> {
        let n = exprs.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("system has no components".into()));
        }
        if exprs.iter().any(|e| e.dim() != n) {
            return Err(Error::DimensionMismatch(format!(
                "{n} components but expressions are over a different number of variables"
            )));
        }
        Ok(SystemModel {
            exprs,
            smoothness: Smoothness::C4,
        })
    }

    pub fn exprs(&self) -> &[ExprTree] {
        &self.exprs
    }

    pub fn jets2(&self, x: &[f64]) -> Result<Vec<Jet2>> {
        check_dim(x, self.dim())?;
        let vars = seed::<Jet2>(x);
        self.exprs.iter().map(|e| e.eval_with(&vars)).collect()
    }

    /// `|F(0)| <= 1e-12`.
    pub fn equilibrium_at_origin(&self) -> Result<bool> {
        let f0 = self.eval_vec(&vec![0.0; self.dim()])?;
        Ok(f0.norm() <= 1e-12)
    }
}

impl VectorField for SystemModel {
    fn dim(&self) -> usize {
        self.exprs.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(x, self.dim())?;
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval_with::<f64>(x)?;
        }
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(x, self.dim())?;
        jacobian_of(&self.exprs, x)
    }

    fn smoothness(&self) -> Smoothness {
        self.smoothness
    }
}

/// `ė = A e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::DimensionMismatch("A must be a non-empty square matrix".into()));
        }
        Ok(LinearSystem { a })
    }
}

impl VectorField for LinearSystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(x, self.dim())?;
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(x, self.dim())?;
        Ok(self.a.clone())
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C4
    }
}

/// `ė = F(e, x), ẋ = G(e, x)` with `F(0, x) = 0`.
///
/// Expressions are written over the concatenated state `(e, x)`: the first
/// `n_e` variables are `e`, the remaining `n_x` are `x`.
#[derive(Debug, Clone)]
pub struct TransverseModel {
    n_e: usize,
    n_x: usize,
    f: Vec<ExprTree>,
    g: Vec<ExprTree>,
}

impl TransverseModel {
    pub fn new(n_e: usize, f: Vec<ExprTree>, g: Vec<ExprTree>) -> Result<Self> {
        let n_x = g.len();
        if n_e == 0 || n_x == 0 || f.len() != n_e {
            return Err(Error::DimensionMismatch(format!(
                "transverse model needs n_e = {} F and n_x >= 1 G expressions",
                n_e
            )));
        }
        if f.iter().chain(&g).any(|e| e.dim() != n_e + n_x) {
            return Err(Error::DimensionMismatch(
                "transverse expressions must be over (e, x)".into(),
            ));
        }
        Ok(TransverseModel { n_e, n_x, f, g })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        let n_e = spec.e_dim.ok_or_else(|| {
            Error::InvalidArgument("document does not declare e_dim for a transverse model".into())
        })?;
        TransverseModel::new(n_e, spec.f.clone(), spec.g_manifold.clone())
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    fn joined(&self, e: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim(e, self.n_e)?;
        check_dim(x, self.n_x)?;
        Ok(e.iter().chain(x).copied().collect())
    }

    pub fn f(&self, e: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        let z = self.joined(e, x)?;
        self.f.iter().map(|t| t.eval_with::<f64>(&z)).collect::<Result<Vec<_>>>().map(DVector::from_vec)
    }

    pub fn g(&self, e: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        let z = self.joined(e, x)?;
        self.g.iter().map(|t| t.eval_with::<f64>(&z)).collect::<Result<Vec<_>>>().map(DVector::from_vec)
    }

    /// Jacobians of `F` and `G` with respect to the joined `(e, x)` state.
    pub fn jacobians(&self, e: &[f64], x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let z = self.joined(e, x)?;
        Ok((jacobian_of(&self.f, &z)?, jacobian_of(&self.g, &z)?))
    }

    /// Second-order jets of the `F` components over `(e, x)`.
    pub fn f_jets2(&self, e: &[f64], x: &[f64]) -> Result<Vec<Jet2>> {
        let z = self.joined(e, x)?;
        let vars = seed::<Jet2>(&z);
        self.f.iter().map(|t| t.eval_with(&vars)).collect()
    }

    /// `∂F/∂e(0, x)`.
    pub fn df_de_on_manifold(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (jf, _) = self.jacobians(&vec![0.0; self.n_e], x)?;
        Ok(jf.columns(0, self.n_e).into_owned())
    }

    /// `max |F(0, x)|` over the given samples; the manifold `e = 0` is
    /// invariant when this vanishes.
    pub fn invariance_defect(&self, xs: &[Vec<f64>]) -> Result<f64> {
        let zero = vec![0.0; self.n_e];
        let mut worst: f64 = 0.0;
        for x in xs {
            worst = worst.max(self.f(&zero, x)?.norm());
        }
        Ok(worst)
    }

    /// The coupled system on `R^{n_e + n_x}`.
    pub fn full_system(&self) -> SystemModel {
        SystemModel {
            exprs: self.f.iter().chain(&self.g).cloned().collect(),
            smoothness: Smoothness::C4,
        }
    }

    /// `x ↦ G(0, x)`, the drift restricted to the invariant manifold.
    pub fn manifold_drift(&self) -> ManifoldDrift<'_> {
        ManifoldDrift { model: self }
    }
}

/// `G̃(x) = G(0, x)` as a field on `R^{n_x}`.
#[derive(Debug, Clone, Copy)]
pub struct ManifoldDrift<'a> {
    model: &'a TransverseModel,
}

impl VectorField for ManifoldDrift<'_> {
    fn dim(&self) -> usize {
        self.model.n_x
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.model.g(&vec![0.0; self.model.n_e], x)?;
        out.copy_from_slice(g.as_slice());
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (_, jg) = self.model.jacobians(&vec![0.0; self.model.n_e], x)?;
        Ok(jg.columns(self.model.n_e, self.model.n_x).into_owned())
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C4
    }
}

/// A field given by a closure and its Jacobian; handy for composed models.
pub struct FnField<F, J> {
    dim: usize,
    f: F,
    j: J,
}

impl<F, J> FnField<F, J>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync,
    J: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync,
{
    pub fn new(dim: usize, f: F, j: J) -> Self {
        FnField { dim, f, j }
    }
}

impl<F, J> VectorField for FnField<F, J>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Send + Sync,
    J: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(x, self.dim)?;
        (self.f)(x, out)
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(x, self.dim)?;
        (self.j)(x)
    }
}
