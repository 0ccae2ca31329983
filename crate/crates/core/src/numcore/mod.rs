//! Dense `f64` tensors, reverse-mode differentiation and Adam.

mod adam;
pub mod gradcheck;
pub mod conv;
pub mod special;
mod tape;
mod tensor;

pub use adam::{adam_step, adam_step_slice, AdamState};
pub use tape::{gaussian_log2_mass, Gradients, Tape, Var};
pub use tensor::Tensor;
