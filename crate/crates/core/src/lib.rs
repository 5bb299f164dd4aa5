// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod demos;
pub mod error;
pub mod io;
pub mod mask;
pub mod model;
pub mod report;
pub mod spectral;

pub use error::{Error, Result};
