//! Best linear unbiased post-processing of noisy hierarchical counts, with an
//! integer top-down stage, a synthetic instance generator and an evaluation harness.

pub mod blue;
pub mod error;
pub mod eval;
pub mod integer;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod schema;

pub use error::{Error, Result};
