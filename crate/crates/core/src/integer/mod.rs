//! Integer stage: multi-pass constrained least squares and rounding.

pub mod lp;
pub mod multipass;
pub mod pass;
pub mod qp;
pub mod weight;

pub use multipass::{bluedown, multipass, solve_top_down, BlueDownOptions, MultipassOptions, MultipassOutput};
pub use pass::{least_squares_pass, rounder_pass, Group, LsPass, RoundPass, RoundingProblem};
pub use weight::{weight_matrix, Weight};
