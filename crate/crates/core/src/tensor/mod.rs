//! Dense tensors with tape-based reverse-mode differentiation.

pub mod checkpoint;
mod dense;
pub mod gradcheck;
mod graph;
mod params;
mod scalar;

pub use dense::Tensor;
pub use gradcheck::{gradcheck, gradcheck_piecewise, GradcheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
