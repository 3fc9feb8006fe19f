//! Numerical laboratory for log-correlated Gaussian fields, Gaussian
//! multiplicative chaos and the one-dimensional stochastic pressure equation
//! `-(e^{◇(-X)} ◇ U')' = f`, solved pathwise and in the Wick sense.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod chaos;
pub mod config;
pub mod covkernel;
pub mod error;
pub mod exec;
pub mod fieldsim;
pub mod gmc;
pub mod harness;
pub mod interp;
pub mod potential;
pub mod projection;
pub mod pressure;
pub mod quad;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
