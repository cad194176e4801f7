#![allow(
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::neg_cmp_op_on_partial_ord
)]

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod scenario;
pub mod train;

pub use error::{Error, Result};
