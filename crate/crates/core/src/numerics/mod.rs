//! Dense tensors, parameters and reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod param;
pub mod tensor;

pub use gradcheck::{grad_check, Coverage, GradCheckReport};
pub use graph::{AttnMask, Gradients, Graph, NodeId};
pub use param::{ParamGroup, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Epsilon used by every layer normalisation in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
