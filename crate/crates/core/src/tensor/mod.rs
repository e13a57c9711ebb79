//! Dense `f64` tensors, a define-by-run tape and the Adam optimizer.

mod gemm;
pub mod optim;
mod tape;
mod value;

pub use optim::{adam_update, AdamHyper};
pub use tape::{argmax, sigmoid_scalar, softmax_values, Tape, Var};
pub use value::Tensor;
