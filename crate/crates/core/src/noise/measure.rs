use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::discrete_gaussian::sample_discrete_gaussian;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::schema::{GeoTree, QueryKind, Schema};

/// Noisy answers to one node's workload.
///
/// `y1` is laid out like `(W1 ⊗ I) x` and `y2` like `(W2 ⊗ 1ᵀ) x`; the
/// variances are one per selector row of `W1` and `W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMeasurement {
    pub node_id: String,
    pub y1: Vector,
    pub y2: Vector,
    pub sigma1: Vector,
    pub sigma2: Vector,
}

/// Independent generator for one measured row, keyed by content rather than position.
pub fn row_rng(seed: u64, node: &str, query: &str, row: usize) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((node.len() as u64).to_le_bytes());
    h.update(node.as_bytes());
    h.update((query.len() as u64).to_le_bytes());
    h.update(query.as_bytes());
    h.update((row as u64).to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

pub fn measure_tree(schema: &Schema, tree: &GeoTree, seed: u64) -> Result<Vec<NoisyMeasurement>> {
    tree.nodes
        .par_iter()
        .map(|node| {
            let truth = node
                .truth_vector()
                .ok_or_else(|| Error::Usage(format!("node {} has no truth to measure", node.id)))?;
            let w = &schema.workloads[node.level];
            let d = schema.d();
            let (mut y1, mut y2) = w.answer(&truth)?;
            for block in &w.blocks {
                let q = &schema.queries[block.query];
                let (y, sig, per_row) = match block.kind {
                    QueryKind::Individual => (&mut y1, &w.sigma1, d),
                    QueryKind::Aggregate => (&mut y2, &w.sigma2, 1),
                };
                for r in 0..block.rows * per_row {
                    let var = sig[block.offset + r / per_row];
                    let mut rng = row_rng(seed, &node.id, &q.name, r);
                    y[block.offset * per_row + r] += sample_discrete_gaussian(0, var, &mut rng) as f64;
                }
            }
            Ok(NoisyMeasurement {
                node_id: node.id.clone(),
                y1,
                y2,
                sigma1: w.sigma1.clone(),
                sigma2: w.sigma2.clone(),
            })
        })
        .collect()
}

/// One line of a noisy measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfRecord {
    pub node: String,
    pub query: String,
    pub row: usize,
    pub value: f64,
    pub variance: f64,
}

pub fn to_records(schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement]) -> Vec<NmfRecord> {
    let d = schema.d();
    let mut out = Vec::new();
    for (node, m) in tree.nodes.iter().zip(nmf) {
        let w = &schema.workloads[node.level];
        for block in &w.blocks {
            let q = &schema.queries[block.query];
            let (y, sig, per_row) = match block.kind {
                QueryKind::Individual => (&m.y1, &m.sigma1, d),
                QueryKind::Aggregate => (&m.y2, &m.sigma2, 1),
            };
            for r in 0..block.rows * per_row {
                out.push(NmfRecord {
                    node: m.node_id.clone(),
                    query: q.name.clone(),
                    row: r,
                    value: y[block.offset * per_row + r],
                    variance: sig[block.offset + r / per_row],
                });
            }
        }
    }
    out
}

/// Reassemble per-node measurements, in tree order, from file records.
pub fn from_records(schema: &Schema, tree: &GeoTree, records: &[NmfRecord]) -> Result<Vec<NoisyMeasurement>> {
    let d = schema.d();
    let mut out: Vec<NoisyMeasurement> = tree
        .nodes
        .iter()
        .map(|n| {
            let w = &schema.workloads[n.level];
            NoisyMeasurement {
                node_id: n.id.clone(),
                y1: Vector::from_element(w.w1.nrows() * d, f64::NAN),
                y2: Vector::from_element(w.w2.nrows(), f64::NAN),
                sigma1: Vector::from_element(w.w1.nrows(), f64::NAN),
                sigma2: Vector::from_element(w.w2.nrows(), f64::NAN),
            }
        })
        .collect();
    let query_index: std::collections::HashMap<&str, usize> = schema
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.name.as_str(), i))
        .collect();
    for rec in records {
        let ni = tree
            .get(&rec.node)
            .ok_or_else(|| Error::Parse(format!("measurement for unknown node {}", rec.node)))?;
        let qi = *query_index
            .get(rec.query.as_str())
            .ok_or_else(|| Error::Parse(format!("unknown query {}", rec.query)))?;
        let w = &schema.workloads[tree.nodes[ni].level];
        let block = w
            .blocks
            .iter()
            .find(|b| b.query == qi)
            .expect("every query has a block");
        let m = &mut out[ni];
        let (y, sig, per_row) = match block.kind {
            QueryKind::Individual => (&mut m.y1, &mut m.sigma1, d),
            QueryKind::Aggregate => (&mut m.y2, &mut m.sigma2, 1),
        };
        if rec.row >= block.rows * per_row {
            return Err(Error::Parse(format!(
                "node {} query {} row {} out of range",
                rec.node, rec.query, rec.row
            )));
        }
        if !(rec.variance > 0.0 && rec.variance.is_finite()) || !rec.value.is_finite() {
            return Err(Error::Parse(format!(
                "node {} query {} row {}: bad value or variance",
                rec.node, rec.query, rec.row
            )));
        }
        let sr = block.offset + rec.row / per_row;
        if !sig[sr].is_nan() && sig[sr] != rec.variance {
            return Err(Error::Parse(format!(
                "node {} query {}: variance differs within one selector row",
                rec.node, rec.query
            )));
        }
        sig[sr] = rec.variance;
        y[block.offset * per_row + rec.row] = rec.value;
    }
    for m in &out {
        if m.y1.iter().chain(m.y2.iter()).any(|v| v.is_nan()) {
            return Err(Error::Coverage(format!("node {} is not fully measured", m.node_id)));
        }
    }
    Ok(out)
}
