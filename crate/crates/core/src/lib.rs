//! Joint detection-estimation of hemodynamic and perfusion responses in
//! arterial spin labelling fMRI, with an optional physiological link between
//! the two responses derived from the balloon model.

// `!(x > 0.0)` is how NaN gets rejected along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aslmodel;
pub mod balloon;
pub mod csvio;
pub mod error;
pub mod eval;
pub mod linop;
pub mod sampler;

pub use error::{Error, Result};
