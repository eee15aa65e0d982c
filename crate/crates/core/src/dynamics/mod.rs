//! Flows, lifted (variational) flows and transverse flows.

mod flow;
mod integrator;
mod model;
mod trajectory;

pub(crate) use flow::{driven_flow, flow_signed, transverse_linear_flow, GramianChannel};
pub use flow::{flow, transverse_flow, variational_flow, FlowOptions, TransverseTrajectory};
pub use integrator::{integrate, DenseSolution, FloorGroups, IntegratorOptions};
pub use model::{FnField, LinearSystem, ManifoldDrift, Smoothness, SystemModel, TransverseModel, VectorField};
pub use trajectory::Trajectory;
pub(crate) use trajectory::fmt17;
