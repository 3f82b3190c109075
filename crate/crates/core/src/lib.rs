// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvn;
pub mod combiners;
pub mod copulas;
pub mod correlation;
pub mod diagnostics;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};
