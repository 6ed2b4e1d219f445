//! Dense tensors, the handful of primitives the autoencoder uses, and a
//! reverse-mode tape over them.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_at};
pub use kernels::{conv3d_transpose, conv3d_valid, dense, dropout, Mode};
pub use tape::{Gradients, Tape, Var, Q_FLOOR};
pub use tensor::Tensor;
