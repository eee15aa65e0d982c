use std::fs;
use std::path::PathBuf;

use lyapcert::metric::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Analyze,
    Metric,
    Certify,
    Stabilize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Metric => "metric",
            Command::Certify => "certify",
            Command::Stabilize => "stabilize",
        }
    }
}

/// Everything a run depends on. Reports embed it verbatim, so a run can be
/// replayed from its own output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Catalog name, `linear:<path>` or a path to a system document.
    pub system: String,
    /// Row-major `Q`; falls back to the document's `Q`, then the identity.
    pub q: Option<Vec<f64>>,
    /// Integration and metric tolerance.
    pub tol: f64,
    /// Bound on residual eigenvalues and Dini slack.
    pub check_tol: f64,
    pub horizon: f64,
    pub radii: Vec<f64>,
    /// Sample trajectories per radius (or per box).
    pub samples: usize,
    /// Per-axis grid; evaluation points are its tensor product.
    pub grid: Vec<f64>,
    pub variant: Variant,
    pub lambda_gain: f64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
    /// Parameter overrides `name = value`.
    pub params: Vec<(String, f64)>,
}

impl RunConfig {
    pub fn new(command: Command, system: impl Into<String>) -> Self {
        RunConfig {
            command,
            system: system.into(),
            q: None,
            tol: 1e-10,
            check_tol: 1e-4,
            horizon: 20.0,
            radii: vec![0.5, 1.0, 2.0],
            samples: 8,
            grid: vec![-2.0, -1.0, 0.5, 1.0, 2.0],
            variant: Variant::AlongSolutions,
            lambda_gain: 1.0,
            threads: None,
            out: PathBuf::from("out"),
            seed: 0,
            params: vec![],
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        for (name, v) in [("tol", self.tol), ("check-tol", self.check_tol), ("horizon", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.radii.is_empty() || self.radii[0] <= 0.0 || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return bad("radii must be positive and strictly increasing".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.grid.is_empty() || self.grid.iter().any(|g| !g.is_finite()) {
            return bad("grid must be a non-empty list of finite values".into());
        }
        if !(self.lambda_gain >= 0.0 && self.lambda_gain.is_finite()) {
            return bad(format!("lambda-gain must be finite and >= 0, got {}", self.lambda_gain));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Create the output directory and make sure it accepts files.
    pub fn prepare_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Config(format!("{}: {e}", self.out.display())))?;
        let probe = self.out.join(".lyapcert-write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::Config(format!("{} is not writable: {e}", self.out.display())))?;
        fs::remove_file(&probe).map_err(|e| CliError::Config(format!("{}: {e}", self.out.display())))?;
        Ok(())
    }

    /// Tensor-product evaluation points in `n` dimensions, first axis slowest.
    pub fn grid_points(&self, n: usize) -> Vec<Vec<f64>> {
        let mut points = vec![vec![]];
        for _ in 0..n {
            points = points
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    self.grid.iter().map(move |g| {
                        let mut q = p.clone();
                        q.push(*g);
                        q
                    })
                })
                .collect();
        }
        points
    }

    /// The box spanned by the grid in `n` dimensions.
    pub fn grid_box(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lo = self.grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (vec![lo; n], vec![hi; n])
    }
}
