//! Neural-network building blocks: a reverse-mode autodiff tape over dense
//! matrices, parameter storage, initializers, MLPs, a SchNet-style
//! invariant atom encoder, Adam, and checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod mlp;
pub mod params;
pub mod schnet;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, GraphScalar, NodeId, Tensor};
pub use mlp::{Activation, Dense, Mlp};
pub use params::{Param, ParamId, ParamStore};
