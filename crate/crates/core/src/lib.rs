// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod fgn;
pub mod fou;
pub mod gaussian;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};

/// 3x3 real matrix used for Jacobians and covariance matrices.
pub type Matrix3 = nalgebra::Matrix3<f64>;
