//! Matrix-free natural gradient descent with randomized Nyström
//! preconditioning for neural-network PDE solvers.

// `!(x > 0.0)` is used deliberately so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod gramian;
pub mod harness;
pub mod krylov;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod problems;
pub mod sketch;

pub use error::{Error, Result};
