//! Text front end: expression trees, system documents and forward-mode
//! derivatives.

mod jet;
mod parser;
mod spec;
mod tree;

pub use jet::{Dual, Jet1, Jet2, Scalar};
pub use parser::{parse_constant, parse_expr, Origin};
pub use spec::SystemSpec;
pub use tree::{Expr, ExprTree, Func, ParamTable};

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};

/// Parse a document describing an autonomous system `ė = F(e)`.
pub fn parse_system(text: &str) -> Result<SystemModel> {
    parse_system_with(text, &[])
}

/// Like [`parse_system`], with parameter values supplied or overridden by the caller.
pub fn parse_system_with(text: &str, params: &[(String, f64)]) -> Result<SystemModel> {
    let spec = SystemSpec::parse_with(text, params)?;
    if spec.e_dim.is_some() {
        return Err(Error::InvalidArgument(
            "document declares a transverse model (e_dim); use SystemSpec::transverse_model".into(),
        ));
    }
    SystemModel::from_exprs(spec.f)
}

/// Second-order jets of every component of `model` at `point`.
pub fn eval_jet2(model: &SystemModel, point: &[f64]) -> Result<Vec<Jet2>> {
    model.jets2(point)
}

/// Seed all coordinates of `point` as independent variables.
pub(crate) fn seed<S: Scalar>(point: &[f64]) -> Vec<S> {
    let n = point.len();
    point
        .iter()
        .enumerate()
        .map(|(i, v)| S::variable(*v, i, n))
        .collect()
}
