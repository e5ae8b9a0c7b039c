//! Dense `f64` tensors and a reverse-mode tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, GradCheck};
pub use tape::{Gradients, Tape, Var, PAD};
pub(crate) use tape::zoh;
pub use tensor::Tensor;
