//! Dense tensors with a small reverse-mode tape.

mod adam;
pub mod check;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_update, Adam, AdamConfig};
pub use params::{Bound, ParamStore, ParamTensor};
pub use tape::{Gradients, LinearOp, Tape, Var};
pub use tensor::Tensor;
