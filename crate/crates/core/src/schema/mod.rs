//! Geocode trees, bucket spaces, per-node workloads and constraints, and the
//! synthetic instance generator.

pub mod bucket;
pub mod constraint;
pub mod generate;
pub mod query;
pub mod spec;
pub mod tree;

pub use bucket::{BucketSpace, Feature};
pub use constraint::{split_constraints, ConstraintSet};
pub use generate::build_instance;
pub use query::{QueryKind, QuerySpec, QueryType, Workload};
pub use spec::{InstanceSpec, PassKind, Schema};
pub use tree::{GeoNode, GeoTree};
