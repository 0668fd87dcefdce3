//! Dense `f64` tensors with a tape-based reverse-mode autodiff, the
//! optimizer, and the checkpoint archive used by `layoutkit`.
//!
//! Every primitive is eager and unfused. Gradients of parameters live in a
//! [`GradStore`] owned by the caller so that a batch can accumulate across
//! several tapes before a single optimizer step.

pub mod check;
pub mod checkpoint;
mod error;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_params, primitive_suite};
pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use optim::{Adam, AdamConfig};
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
