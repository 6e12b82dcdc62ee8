//! Dense tensors, a define-by-run gradient tape and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;
