//! Differentiable direct visual odometry and unsupervised monocular depth objectives.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ddvo;
pub mod dual;
pub mod dvo;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod training;
mod warp;

pub use error::{Error, Result};
