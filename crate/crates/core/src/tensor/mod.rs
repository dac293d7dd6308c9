//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! Forward values are computed eagerly when an op is recorded; the tape only
//! remembers which op produced each value so that [`Tape::backward`] can walk
//! it in reverse. Broadcasting is never implicit: elementwise ops require
//! identical shapes and [`Tape::broadcast`] is the only way to expand a
//! tensor.
//!
//! Subgradient conventions: `relu'(0) = abs'(0) = 0`, max-reductions route the whole
//! gradient to the first maximal element, and the row norm has zero gradient
//! at the origin.

mod array;
mod gradcheck;
mod ops;
mod tape;

pub use array::Tensor;
pub use gradcheck::{finite_diff_check, GradCheck, GradCheckReport};
pub use ops::CustomOp;
pub use tape::{Gradients, Tape, Var};

#[doc(hidden)]
pub use ops::inject_backward_fault;
