// Negated float comparisons are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod gradcheck;
pub mod hybrid;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod registry;
pub mod training;

pub use error::{Error, Result};
