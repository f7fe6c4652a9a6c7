//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! The engine is define-by-run: operations executed through a [`Tape`]
//! record their inputs and a backward rule, and [`Tape::backward`] walks
//! the recording in reverse to accumulate gradients of a scalar loss with
//! respect to every leaf that requires them. Shapes are dynamic, so graphs
//! whose sizes change between steps (variable agent counts, variable
//! sequence lengths) need no recompilation.
//!
//! The primitive set is deliberately small: dense matmul, elementwise
//! arithmetic, shape surgery (concat/slice/reshape/transpose), reductions,
//! the usual nonlinearities, softmax, group normalization, smooth-L1, and
//! reparameterized Gaussian sampling. There is no broadcasting beyond
//! trailing-axis expansion; anything else requires an explicit reshape.
//!
//! [`check::gradient_check`] verifies analytic gradients against central
//! finite differences and is the oracle used by this crate's own tests.

pub mod check;
mod error;
mod tensor;
mod tape;

pub use check::{gradient_check, CheckInput, GradCheckReport};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub use tape::{Tape, Var};

/// Scalar type used by every tensor.
///
/// Defaults to `f64`; the `single-precision` feature switches the whole
/// engine to `f32` for faster training at looser tolerances.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;

#[cfg(feature = "single-precision")]
pub type Real = f32;
