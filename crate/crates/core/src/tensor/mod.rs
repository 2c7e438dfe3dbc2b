//! Dense numerics, reverse-mode differentiation and the optimizer.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use tape::{median_pair, rbf_kernel, Gradients, Tape, Var};
