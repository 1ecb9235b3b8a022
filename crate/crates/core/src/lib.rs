//! A deep convolutional GAN engine built on its own tensor kernels and
//! tape-based reverse-mode differentiation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod gan;
pub mod layers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
