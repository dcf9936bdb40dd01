//! Discrete Gaussian noise and synthesis of noisy per-node measurements.

pub mod discrete_gaussian;
pub mod measure;

pub use discrete_gaussian::{discrete_gaussian_pmf, sample_discrete_gaussian};
pub use measure::{measure_tree, row_rng, NmfRecord, NoisyMeasurement};
