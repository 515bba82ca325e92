//! Dense tensor math, the reverse-mode autodiff tape, the Adam optimizer,
//! and the finite-difference gradient oracle.

pub mod adam;
pub mod findiff;
pub mod graph;
mod kernels;
pub mod tensor;

pub use adam::AdamState;
pub use findiff::{finite_diff_grad, max_rel_err, rel_err};
pub use graph::{stable_sigmoid, Activation, Graph, Mode, NodeId, ParamBinder, BN_EPS};
pub use tensor::{exact_sum, Tensor};
