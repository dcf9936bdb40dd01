use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::constraint::{ConstraintRecord, ConstraintSet};
use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct GeoNode {
    pub id: String,
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub truth: Option<Vec<i64>>,
    pub constraints: ConstraintSet,
}

impl GeoNode {
    pub fn truth_vector(&self) -> Option<Vector> {
        self.truth
            .as_ref()
            .map(|t| Vector::from_iterator(t.len(), t.iter().map(|&v| v as f64)))
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Geocode hierarchy stored level by level; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTree {
    pub nodes: Vec<GeoNode>,
    index: HashMap<String, usize>,
}

/// Sort key treating each path component as a number, so "0/2" precedes "0/10".
pub fn id_key(id: &str) -> Vec<u64> {
    id.split('/').map(|p| p.parse().unwrap_or(u64::MAX)).collect()
}

impl GeoTree {
    /// Build from nodes given in any order; parents are referenced by id.
    pub fn from_parts(mut parts: Vec<(GeoNode, Option<String>)>) -> Result<Self> {
        parts.sort_by(|a, b| {
            (a.0.level, id_key(&a.0.id)).cmp(&(b.0.level, id_key(&b.0.id)))
        });
        let mut index = HashMap::new();
        for (i, (node, _)) in parts.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate node id {}", node.id)));
            }
        }
        let mut nodes = Vec::with_capacity(parts.len());
        for (mut node, parent) in parts {
            node.children.clear();
            node.parent = match parent {
                None => None,
                Some(p) => Some(*index.get(&p).ok_or_else(|| {
                    Error::Parse(format!("node {} has unknown parent {p}", node.id))
                })?),
            };
            nodes.push(node);
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                if nodes[p].level + 1 != nodes[i].level {
                    return Err(Error::Parse(format!(
                        "node {} at level {} under parent at level {}",
                        nodes[i].id, nodes[i].level, nodes[p].level
                    )));
                }
                nodes[p].children.push(i);
            }
        }
        let roots = nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 || nodes.first().is_some_and(|n| n.parent.is_some()) {
            return Err(Error::Parse(format!("tree must have exactly one root, found {roots}")));
        }
        Ok(GeoTree { nodes, index })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().map_or(0, |l| l + 1)
    }

    /// Node indices grouped by level, each group in id order.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth()];
        for (i, n) in self.nodes.iter().enumerate() {
            out[n.level].push(i);
        }
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }
}

/// One line of a tree file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub level: usize,
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<i64>>,
    #[serde(default)]
    pub constraints: ConstraintRecord,
}

impl GeoTree {
    pub fn to_records(&self) -> Vec<TreeRecord> {
        self.nodes
            .iter()
            .map(|n| TreeRecord {
                id: n.id.clone(),
                level: n.level,
                parent: n.parent.map(|p| self.nodes[p].id.clone()),
                truth: n.truth.clone(),
                constraints: n.constraints.to_record(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<TreeRecord>, k: usize, d: usize) -> Result<Self> {
        let parts = records
            .into_iter()
            .map(|r| {
                if let Some(t) = &r.truth {
                    if t.len() != k * d {
                        return Err(Error::Parse(format!(
                            "node {}: truth has {} entries, expected {}",
                            r.id,
                            t.len(),
                            k * d
                        )));
                    }
                }
                let node = GeoNode {
                    constraints: ConstraintSet::from_record(&r.constraints, k, d)
                        .map_err(|e| e.at_node(r.id.clone()))?,
                    id: r.id,
                    level: r.level,
                    parent: None,
                    children: Vec::new(),
                    truth: r.truth,
                };
                Ok((node, r.parent))
            })
            .collect::<Result<Vec<_>>>()?;
        GeoTree::from_parts(parts)
    }

    /// Copy of the tree without ground truth.
    pub fn without_truth(&self) -> Self {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.truth = None;
        }
        t
    }
}
