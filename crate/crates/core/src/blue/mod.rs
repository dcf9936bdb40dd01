//! Best linear unbiased estimation: per-node constrained GLS, combination of
//! independent estimates, and the two-pass tree algorithm.

pub mod estimate;
pub mod gls;
pub mod tree;

pub use estimate::{aggregate_children, combine, Covariance, Estimate, EstimateRecord};
pub use gls::{ecgls, gls, gls_dense, node_estimate};
pub use tree::{solve_tree_blue, BottomUp, Diagnostics, SolveOptions, SolveReport};
