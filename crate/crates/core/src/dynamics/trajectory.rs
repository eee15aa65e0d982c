use std::io::{self, Write};

use nalgebra::DMatrix;

use super::integrator::DenseSolution;

/// Time-stamped states, optionally with transition matrices alongside.
///
/// Internally each sample is one augmented vector: the state, then the
/// transition matrix in column-major order, then any auxiliary channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    phi_dim: usize,
    aux: usize,
    sol: DenseSolution,
}

/// Format a float with 17 significant digits.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub(crate) fn new(dim: usize, phi_dim: usize, aux: usize, sol: DenseSolution) -> Self {
        debug_assert_eq!(sol.dim(), dim + phi_dim * phi_dim + aux);
        Trajectory { dim, phi_dim, aux, sol }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_phi(&self) -> bool {
        self.phi_dim > 0
    }

    pub fn len(&self) -> usize {
        self.sol.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sol.ts.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.sol.ts
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.sol.state(i)[..self.dim]
    }

    pub fn phi(&self, i: usize) -> Option<DMatrix<f64>> {
        self.phi_from(self.sol.state(i))
    }

    /// Auxiliary channels (such as an accumulated Gramian) at step `i`.
    pub fn aux(&self, i: usize) -> &[f64] {
        let start = self.dim + self.phi_dim * self.phi_dim;
        &self.sol.state(i)[start..start + self.aux]
    }

    pub fn aux_at(&self, t: f64) -> Option<Vec<f64>> {
        let start = self.dim + self.phi_dim * self.phi_dim;
        self.sol.eval(t).map(|y| y[start..start + self.aux].to_vec())
    }

    fn phi_from(&self, y: &[f64]) -> Option<DMatrix<f64>> {
        (self.phi_dim > 0).then(|| {
            let m = self.phi_dim;
            DMatrix::from_column_slice(m, m, &y[self.dim..self.dim + m * m])
        })
    }

    pub fn final_time(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn final_phi(&self) -> Option<DMatrix<f64>> {
        self.phi(self.len() - 1)
    }

    /// Dense-output state at `t` inside the integrated span.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        self.sol.eval(t).map(|mut y| {
            y.truncate(self.dim);
            y
        })
    }

    pub fn phi_at(&self, t: f64) -> Option<DMatrix<f64>> {
        self.sol.eval(t).and_then(|y| self.phi_from(&y))
    }

    /// Accumulated local error estimate reported by the integrator.
    pub fn error_estimate(&self) -> f64 {
        self.sol.error_estimate
    }

    pub fn rhs_evals(&self) -> usize {
        self.sol.rhs_evals
    }

    /// CSV with header `t,e_1..e_n[,phi_11..phi_nn]`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("e_{i}")));
        let m = self.phi_dim;
        for i in 1..=m {
            header.extend((1..=m).map(|j| format!("phi_{i}{j}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt17(self.sol.ts[k])];
            row.extend(self.state(k).iter().map(|v| fmt17(*v)));
            if let Some(phi) = self.phi(k) {
                for i in 0..m {
                    row.extend((0..m).map(|j| fmt17(phi[(i, j)])));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
