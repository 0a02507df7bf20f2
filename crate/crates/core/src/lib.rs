//! Tensor-based regression and classification regularized by the overlapped,
//! latent and scaled latent trace norms.
//!
//! The crate provides dense tensors with mode unfoldings, the trace-norm
//! proximal kernels, a dual ADMM solver for latent-type norms, a primal ADMM
//! solver for the overlapped norm, a ridge baseline, excess-risk bound
//! calculators, and the synthetic experiment harness behind the `tensorreg`
//! command-line tool.
// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cv;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod norms;
pub mod rng;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::DenseTensor;
