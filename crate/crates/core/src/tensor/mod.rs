//! Dense tensors, a reverse-mode graph over them, and Adam.

mod adam;
mod array;
mod graph;
mod params;

pub use adam::AdamState;
pub use array::Tensor;
pub use graph::{softmax_row, Activation, Graph, NodeId, LOG_FLOOR};
pub use params::{ParamId, ParamStore};

#[cfg(test)]
mod tests;
