//! The raw-start baseline, error and bias metrics, replicate runs and the metrics file.

pub mod experiment;
pub mod metric;
pub mod query;

pub use experiment::{
    baseline_topdown, normalize, read_metrics, run_experiment, solve, summarize, write_metrics, Algorithm, Experiment,
    ExperimentOptions, MetricsRow, SummaryRow,
};
pub use metric::{bias_by_bin, error_metric, power_of_ten_bins, PopBin};
pub use query::MarginalQuery;
