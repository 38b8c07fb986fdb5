//! Dense f64 tensor math with explicit forward and backward kernels.
//!
//! There is no tape: every kernel exposes a `*_backward` companion so each
//! gradient can be tested in isolation against finite differences.

mod gradcheck;
pub mod ops;
mod tensor;

pub use gradcheck::{gradcheck, GradCheckOptions, GradCheckReport, ParamSet};
pub use tensor::{Parameter, Tensor};
