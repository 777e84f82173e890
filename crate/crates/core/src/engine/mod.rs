//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Forward operations are recorded on a [`Tape`]; [`Tape::backward`] walks
//! the record in reverse and returns gradients for every node that depends
//! on a trainable leaf. Kernels parallelize over independent output elements
//! and sum in a fixed order, so results do not depend on the thread count.

mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use ops::BatchNormMode;
pub use params::{
    load_checkpoint, save_checkpoint, ParamId, ParamStore, Parameter, CHECKPOINT_MAGIC,
};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Real, Tensor};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
