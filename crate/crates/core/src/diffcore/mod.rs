//! Reverse-mode differentiation over dense `f64` matrices with a constant
//! sparse left operand, a straight-through Gumbel-Softmax sampler and an
//! adaptive-moment optimizer.

mod adam;
mod csr;
mod gumbel;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use csr::CsrMatrix;
pub use gumbel::{gumbel_noise, gumbel_softmax_st, gumbel_softmax_st_frozen, hard_indicator, GumbelNoise, GumbelSample};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
