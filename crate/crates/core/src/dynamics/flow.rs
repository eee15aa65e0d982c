use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use super::integrator::{integrate, FloorGroups, IntegratorOptions};
use super::model::{TransverseModel, VectorField};
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

/// Accuracy and safety settings shared by all flows.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowOptions {
    /// Relative tolerance of the embedded error control.
    pub tol: f64,
    /// Norm of the state beyond which the solution is declared to blow up.
    pub blowup_bound: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-10,
            blowup_bound: 1e8,
            max_steps: 2_000_000,
        }
    }
}

impl FlowOptions {
    pub fn new(tol: f64) -> Self {
        FlowOptions {
            tol,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 1e-14 && self.tol < 1e-2) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} outside (1e-14, 1e-2)",
                self.tol
            )));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::InvalidArgument("blow-up bound must be positive".into()));
        }
        Ok(())
    }

    /// Options for `[state (monitor) | Φ (m×m) | aux]`.
    pub(crate) fn integrator(&self, monitor: usize, m: usize) -> IntegratorOptions {
        IntegratorOptions {
            rtol: self.tol,
            // Relative control: decaying states keep their significant digits,
            // which matters once they are reweighted by a growing exponential.
            // Floors are per group so a large block cannot swamp a small one.
            atol: 1e-290,
            floor: 1e-3,
            groups: FloorGroups::Blocks { state: monitor, m },
            max_steps: self.max_steps,
            blowup_bound: self.blowup_bound,
            monitor,
            ..Default::default()
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and >= 0")));
    }
    Ok(())
}

/// `E(e0, t)` for `t` in `[0, horizon]`.
pub fn flow<V: VectorField + ?Sized>(
    model: &V,
    e0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    check_horizon(horizon)?;
    flow_signed(model, e0, horizon, opts)
}

/// Like [`flow`] but `horizon` may be negative (backward in time).
pub(crate) fn flow_signed<V: VectorField + ?Sized>(
    model: &V,
    e0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    let n = model.dim();
    if e0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has dimension {} but the model has {n}",
            e0.len()
        )));
    }
    let sol = integrate(
        |_, y, dy| model.eval(y, dy),
        0.0,
        e0,
        horizon,
        &opts.integrator(n, 0),
        |_, _| false,
    )?;
    Ok(Trajectory::new(n, 0, 0, sol))
}

/// Quadrature channel `Ṁ = w ΦᵀQΦ` integrated alongside a transition matrix.
///
/// With `rescaled` set, the weight is `w = 1 + |A|³` where `A` is the
/// coupling matrix driving `Φ`; otherwise `w = 1`.
pub(crate) struct GramianChannel<'a> {
    pub q: &'a DMatrix<f64>,
    pub rescaled: bool,
}

/// Jointly integrate `ẏ = D(y)` and `Φ̇ = A(y)Φ`, `Φ(0) = I`, optionally
/// accumulating a Gramian channel.
pub(crate) fn driven_flow<D: VectorField + ?Sized>(
    driver: &D,
    coupling: &(dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync),
    phi_dim: usize,
    y0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
    gramian: Option<GramianChannel<'_>>,
) -> Result<Trajectory> {
    let n = driver.dim();
    if y0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has dimension {} but the model has {n}",
            y0.len()
        )));
    }
    let m = phi_dim;
    let aux = if gramian.is_some() { m * m } else { 0 };
    let mut z0 = vec![0.0; n + m * m + aux];
    z0[..n].copy_from_slice(y0);
    for i in 0..m {
        z0[n + i * m + i] = 1.0;
    }
    let rhs = |_: f64, z: &[f64], dz: &mut [f64]| -> Result<()> {
        let (y, rest) = z.split_at(n);
        driver.eval(y, &mut dz[..n])?;
        let a = coupling(y)?;
        let phi = DMatrixView::from_slice(&rest[..m * m], m, m);
        a.mul_to(&phi, &mut DMatrixViewMut::from_slice(&mut dz[n..n + m * m], m, m));
        if let Some(g) = &gramian {
            let w = if g.rescaled {
                1.0 + spectral_norm(&a).powi(3)
            } else {
                1.0
            };
            let dm = phi.transpose() * g.q * &phi * w;
            dz[n + m * m..].copy_from_slice(dm.as_slice());
        }
        Ok(())
    };
    let sol = integrate(rhs, 0.0, &z0, horizon, &opts.integrator(n, m), |_, _| false)?;
    Ok(Trajectory::new(n, m, aux, sol))
}

/// State and transition matrix of the lifted system `Φ̇ = ∂F/∂e(E)Φ`.
pub fn variational_flow<V: VectorField + ?Sized>(
    model: &V,
    e0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    check_horizon(horizon)?;
    driven_flow(model, &|e| model.jacobian(e), model.dim(), e0, horizon, opts, None)
}

/// Result of [`transverse_flow`].
#[derive(Debug, Clone)]
pub struct TransverseTrajectory {
    /// `(E, X)` of the coupled system from `(e0, x0)`.
    pub coupled: Trajectory,
    /// `X̃` driven by `G(0, ·)` from `x0`, with the transverse transition
    /// matrix `Φ̇ = ∂F/∂e(0, X̃)Φ`.
    pub transversal: Trajectory,
}

/// Coupled and transversally linearized flows from `(e0, x0)`.
pub fn transverse_flow(
    model: &TransverseModel,
    e0: &[f64],
    x0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<TransverseTrajectory> {
    opts.validate()?;
    check_horizon(horizon)?;
    if e0.len() != model.n_e() || x0.len() != model.n_x() {
        return Err(Error::DimensionMismatch("transverse initial condition".into()));
    }
    let full = model.full_system();
    let z0: Vec<f64> = e0.iter().chain(x0).copied().collect();
    let coupled = flow_signed(&full, &z0, horizon, opts)?;
    let transversal = transverse_linear_flow(model, x0, horizon, opts, None)?;
    Ok(TransverseTrajectory { coupled, transversal })
}

pub(crate) fn transverse_linear_flow(
    model: &TransverseModel,
    x0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
    gramian: Option<GramianChannel<'_>>,
) -> Result<Trajectory> {
    let drift = model.manifold_drift();
    driven_flow(
        &drift,
        &|x| model.df_de_on_manifold(x),
        model.n_e(),
        x0,
        horizon,
        opts,
        gramian,
    )
}
