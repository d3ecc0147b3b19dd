//! Model-based clustering of tensor-valued observations.
//!
//! The crate fits mixtures of tensor normal distributions whose per-cluster
//! covariance is a Kronecker product of small per-mode covariance matrices.
//! Two fitting routines are provided: a doubly-enhanced EM ([`deem`]) whose
//! E-step solves a group-lasso problem for sparse discriminant tensors, and a
//! standard EM baseline ([`em`]) whose M-step estimates the covariances by a
//! flip-flop iteration. [`init`] supplies k-means initial values, [`sim`]
//! generates benchmark datasets, and [`tensor`]/[`matrix`] hold the dense
//! numerical kernels everything else is built on.

pub mod deem;
pub mod em;
mod error;
pub mod init;
pub mod matrix;
pub mod model;
pub mod sim;
pub mod tensor;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use tensor::Tensor;
