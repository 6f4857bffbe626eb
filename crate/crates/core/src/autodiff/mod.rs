//! Dense tensors, a gradient tape and the Adam optimizer.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, SeqLayout, Tape, Var};
pub use tensor::Tensor;
