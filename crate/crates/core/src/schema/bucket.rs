use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub levels: Vec<String>,
}

impl Feature {
    pub fn new(name: &str, levels: &[&str]) -> Self {
        Feature {
            name: name.to_string(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn card(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

/// The product of asymmetric features (outer index) and symmetric features
/// (inner index). Bucket `(a, s)` is stored at `a * sym_card + s`.
///
/// Within each group the first feature varies slowest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpace {
    pub asym: Vec<Feature>,
    pub sym: Vec<Feature>,
}

impl BucketSpace {
    pub fn new(asym: Vec<Feature>, sym: Vec<Feature>) -> Result<Self> {
        for f in asym.iter().chain(sym.iter()) {
            if f.levels.is_empty() {
                return Err(Error::Schema(format!("feature {} has no levels", f.name)));
            }
        }
        let mut names: Vec<&str> = asym.iter().chain(sym.iter()).map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate feature name".into()));
        }
        Ok(BucketSpace { asym, sym })
    }

    /// Eight housing types, ethnicity and voting age against 63 race combinations.
    pub fn census() -> Self {
        let hhgq = Feature {
            name: "hhgq".into(),
            levels: (0..8).map(|i| format!("hhgq{i}")).collect(),
        };
        let cenrace = Feature {
            name: "cenrace".into(),
            levels: (1..=63).map(|i| format!("race{i}")).collect(),
        };
        BucketSpace {
            asym: vec![
                hhgq,
                Feature::new("hispanic", &["not_hispanic", "hispanic"]),
                Feature::new("votingage", &["under18", "18plus"]),
            ],
            sym: vec![cenrace],
        }
    }

    pub fn asym_card(&self) -> usize {
        self.asym.iter().map(Feature::card).product()
    }

    pub fn sym_card(&self) -> usize {
        self.sym.iter().map(Feature::card).product()
    }

    pub fn len(&self) -> usize {
        self.asym_card() * self.sym_card()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn asym_feature(&self, name: &str) -> Option<usize> {
        self.asym.iter().position(|f| f.name == name)
    }

    pub fn sym_feature(&self, name: &str) -> Option<usize> {
        self.sym.iter().position(|f| f.name == name)
    }

    /// Per-feature level indices of an asymmetric bucket.
    pub fn asym_levels(&self, a: usize) -> Vec<usize> {
        decode(&self.asym, a)
    }

    pub fn sym_levels(&self, s: usize) -> Vec<usize> {
        decode(&self.sym, s)
    }

    pub fn asym_labels(&self) -> Vec<String> {
        (0..self.asym_card()).map(|a| label(&self.asym, &self.asym_levels(a))).collect()
    }

    pub fn sym_labels(&self) -> Vec<String> {
        (0..self.sym_card()).map(|s| label(&self.sym, &self.sym_levels(s))).collect()
    }
}

fn decode(features: &[Feature], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; features.len()];
    for (i, f) in features.iter().enumerate().rev() {
        out[i] = idx % f.card();
        idx /= f.card();
    }
    out
}

fn label(features: &[Feature], levels: &[usize]) -> String {
    if features.is_empty() {
        return "*".into();
    }
    features
        .iter()
        .zip(levels)
        .map(|(f, &l)| f.levels[l].as_str())
        .collect::<Vec<_>>()
        .join("|")
}
