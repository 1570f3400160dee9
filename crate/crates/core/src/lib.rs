// `!(x >= lo)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conditions;
pub mod duality;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod model;
pub mod path;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod value;

pub use error::{Error, Result};
