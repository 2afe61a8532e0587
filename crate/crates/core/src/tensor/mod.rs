//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
mod array;
mod graph;
mod kernels;
mod params;
mod real;

pub use adam::{AdamConfig, AdamState};
pub use array::Tensor;
pub use graph::{Graph, Mode, Var, BCE_EPS};
pub use params::{Param, ParamId, ParamStore, RunningStats, StatsId};
pub use real::Real;
