//! Constrained school-choice simulation and partial identification of
//! effects at admission cutoffs under strategic reporting.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod economy;
pub mod error;
pub mod identify;
pub mod io;
pub mod localpref;
pub mod lp;
pub mod mechanism;
pub mod oracle;
pub mod pipeline;
pub mod presets;
pub mod qsets;

pub use error::{Error, Result};
