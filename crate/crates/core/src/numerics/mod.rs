//! Dense tensors, a reverse-mode tape, and a finite-difference checker.

pub mod gradcheck;
mod graph;
pub mod io;
pub mod kernels;
mod tensor;

pub use gradcheck::{grad_check, grad_check_all};
pub use graph::{rel_index, Gradients, Graph, Var, LAYER_NORM_EPS, PROB_CLAMP};
pub use tensor::{Real, Tensor};
