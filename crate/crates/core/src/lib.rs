//! Lyapunov certificates for nonlinear ODEs built from their first-order
//! approximations: Gramian metrics along solutions, matrix-inequality
//! residuals, geodesic-distance Lyapunov functions and Killing-field
//! controllers.

pub mod catalog;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod metric;
pub mod quadrature;
pub mod sampling;
pub mod stabilization;
pub mod stability;

pub use error::{Error, Result};
