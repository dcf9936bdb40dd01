use serde::{Deserialize, Serialize};

use super::bucket::{BucketSpace, Feature};
use super::query::{census_queries, QueryKind, QuerySpec, QueryType, Variance, Workload};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    /// Project onto the node total.
    Total,
    /// Identity over all buckets.
    Full,
}

impl PassKind {
    pub fn parse(token: &str) -> Result<Self> {
        match token.trim() {
            "total" => Ok(PassKind::Total),
            "full" => Ok(PassKind::Full),
            other => Err(Error::Usage(format!("unknown pass {other:?}, expected total or full"))),
        }
    }
}

/// Parse `"full;total,full;full"` into per-level pass lists.
pub fn parse_passes(text: &str) -> Result<Vec<Vec<PassKind>>> {
    text.split(';')
        .map(|level| level.split(',').map(PassKind::parse).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintPolicy {
    /// Asymmetric feature whose non-household levels behave like facilities:
    /// absent facilities become structural zeros, present ones get bounds.
    pub bounded_feature: Option<String>,
    pub bounded_levels: Vec<String>,
    /// Levels whose nodes have their total population held invariant.
    pub total_levels: Vec<usize>,
    pub facility_prob: f64,
    pub cell_zero_prob: f64,
    pub mean_count: f64,
    pub bound_slack: u64,
    /// Every leaf cell gets exactly this count instead of a random draw.
    pub fixed_count: Option<u64>,
}

impl Default for ConstraintPolicy {
    fn default() -> Self {
        ConstraintPolicy {
            bounded_feature: None,
            bounded_levels: Vec::new(),
            total_levels: vec![0, 1],
            facility_prob: 0.5,
            cell_zero_prob: 0.3,
            mean_count: 3.0,
            bound_slack: 2,
            fixed_count: None,
        }
    }
}

/// Declarative description of a synthetic instance, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default)]
    pub seed: u64,
    /// Number of children of every node at each internal level, top down.
    pub level_arities: Vec<usize>,
    pub asym_features: Vec<Feature>,
    #[serde(default)]
    pub sym_features: Vec<Feature>,
    pub queries: Vec<QuerySpec>,
    /// Pass list per level; defaults to `full` at the root and leaves and
    /// `total,full` in between.
    #[serde(default)]
    pub passes: Option<Vec<Vec<PassKind>>>,
    #[serde(default)]
    pub constraints: ConstraintPolicy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl InstanceSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("instance spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn levels(&self) -> usize {
        self.level_arities.len() + 1
    }

    /// Four-level toy analog of the census setting: housing type and voting
    /// age against three race values.
    pub fn toy_census(seed: u64) -> Self {
        use QueryKind::*;
        let with_var = |mut q: QuerySpec, v: f64| {
            q.variance = Variance::Scalar(v);
            q
        };
        InstanceSpec {
            seed,
            level_arities: vec![4, 5, 5],
            asym_features: vec![
                Feature::new("hhgq", &["household", "group_quarters"]),
                Feature::new("votingage", &["under18", "18plus"]),
            ],
            sym_features: vec![Feature::new("race", &["race1", "race2", "race3"])],
            queries: vec![
                with_var(QuerySpec::new("TOTAL", Aggregate, &[]), 2.0),
                with_var(QuerySpec::new("CENRACE", Individual, &[]), 4.0),
                with_var(QuerySpec::new("VOTINGAGE", Aggregate, &["votingage"]), 4.0),
                with_var(QuerySpec::new("HHGQ", Aggregate, &["hhgq"]), 2.0),
                with_var(QuerySpec::new("VOTINGAGE*CENRACE", Individual, &["votingage"]), 4.0),
                with_var(QuerySpec::new("DETAILED", Individual, &["hhgq", "votingage"]), 4.0),
            ],
            passes: None,
            constraints: ConstraintPolicy {
                bounded_feature: Some("hhgq".into()),
                bounded_levels: vec!["group_quarters".into()],
                total_levels: vec![0, 1],
                facility_prob: 0.4,
                cell_zero_prob: 0.3,
                mean_count: 3.0,
                bound_slack: 2,
                fixed_count: None,
            },
            alpha: 1.0,
        }
    }

    /// The full-size bucket space and query list, on a small tree.
    pub fn census(seed: u64, level_arities: Vec<usize>) -> Self {
        let b = BucketSpace::census();
        InstanceSpec {
            seed,
            level_arities,
            asym_features: b.asym,
            sym_features: b.sym,
            queries: census_queries(),
            passes: None,
            constraints: ConstraintPolicy {
                bounded_feature: Some("hhgq".into()),
                bounded_levels: (1..8).map(|i| format!("hhgq{i}")).collect(),
                ..ConstraintPolicy::default()
            },
            alpha: 1.0,
        }
    }
}

/// An instance spec resolved against its bucket space.
#[derive(Debug, Clone)]
pub struct Schema {
    pub spec: InstanceSpec,
    pub buckets: BucketSpace,
    pub queries: Vec<QueryType>,
    pub workloads: Vec<Workload>,
    pub passes: Vec<Vec<PassKind>>,
}

impl Schema {
    pub fn new(spec: InstanceSpec) -> Result<Self> {
        if spec.level_arities.contains(&0) {
            return Err(Error::Schema("level arities must be at least 1".into()));
        }
        if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
            return Err(Error::Schema("alpha must be positive".into()));
        }
        let buckets = BucketSpace::new(spec.asym_features.clone(), spec.sym_features.clone())?;
        let levels = spec.levels();
        let queries = spec
            .queries
            .iter()
            .map(|q| QueryType::compile(q, &buckets, levels))
            .collect::<Result<Vec<_>>>()?;
        let mut names: Vec<&str> = queries.iter().map(|q| q.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate query name".into()));
        }
        let (k, d) = (buckets.asym_card(), buckets.sym_card());
        let workloads = (0..levels)
            .map(|l| Workload::build(&queries, l, k, d))
            .collect::<Result<Vec<_>>>()?;
        let passes = match &spec.passes {
            Some(p) => {
                if p.len() != levels || p.iter().any(Vec::is_empty) {
                    return Err(Error::Schema(format!(
                        "need a nonempty pass list for each of {levels} levels"
                    )));
                }
                p.clone()
            }
            None => default_passes(levels),
        };
        Ok(Schema {
            spec,
            buckets,
            queries,
            workloads,
            passes,
        })
    }

    pub fn k(&self) -> usize {
        self.buckets.asym_card()
    }

    pub fn d(&self) -> usize {
        self.buckets.sym_card()
    }

    pub fn n(&self) -> usize {
        self.buckets.len()
    }

    pub fn levels(&self) -> usize {
        self.spec.levels()
    }

    pub fn with_passes(mut self, passes: Vec<Vec<PassKind>>) -> Result<Self> {
        self.spec.passes = Some(passes);
        Schema::new(self.spec)
    }
}

pub fn default_passes(levels: usize) -> Vec<Vec<PassKind>> {
    (0..levels)
        .map(|l| {
            if l == 0 || l + 1 == levels {
                vec![PassKind::Full]
            } else {
                vec![PassKind::Total, PassKind::Full]
            }
        })
        .collect()
}
