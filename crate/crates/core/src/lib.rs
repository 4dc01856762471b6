//! Verification and robustness certificates for general dichotomies of
//! nonautonomous linear difference equations `x_{n+1} = A_n x_n`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod certificate;
pub mod cli;
pub mod constructor;
pub mod document;
pub mod error;
pub mod generate;
pub mod halfline;
pub mod linalg;
pub mod robustness;
pub mod system;

pub use error::{Error, Result};
