//! Reverse-mode automatic differentiation over flat row-major tensors.
//!
//! The engine records forward ops on a [`Graph`] tape and replays them in
//! reverse. Kernels cover what a small dense vision pipeline needs: matmul,
//! conv / transposed conv, batch norm, the usual activations, gathers,
//! max/mean reductions and the L1 / smooth-L1 / L2 loss reducers. Everything
//! is generic over f32/f64; gradient checks run in f64.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod real;
pub mod session;
pub mod suite;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use graph::{BackwardOp, Graph, TensorId};
pub use ops::conv::ConvSpec;
pub use params::{Init, ParamEntry, ParamKind, ParamStore};
pub use real::{Dtype, Real};
pub use session::Session;
pub use tensor::{Tensor, TensorView};
