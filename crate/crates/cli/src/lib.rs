//! Library side of the command-line harness: training/eval/infer entry
//! points, checkpoint state, dataset bridging and the gradient-check suite.

pub mod ckpt;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod infer;
pub mod obj;
pub mod train;

pub use error::{CliError, Result};
