#![no_std]
//! Bayesian neural network inference over a small reverse-mode autodiff core.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evidence;
pub mod gp;
pub mod hmc;
pub mod nets;
pub mod optim;
pub mod prob;
pub mod summary;
pub mod tensor;
pub mod vi;

pub use error::{Error, Result};
