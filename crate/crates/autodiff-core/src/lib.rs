//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Parameters live in a [`ParamStore`]; each forward pass records onto a fresh
//! [`Tape`] borrowing the store, and [`Tape::backward`] returns [`Gradients`]
//! that can be accumulated across samples before an [`Adam`] step. Every op
//! checks its output for NaN/Inf and returns an error instead of propagating.

mod checkpoint;
mod error;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{AdResult, AutodiffError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamDiscrepancy};
pub use optim::Adam;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
