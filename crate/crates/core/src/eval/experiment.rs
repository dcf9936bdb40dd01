use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metric::{bias_by_bin, error_metric, level_pairs, power_of_ten_bins, signed_error, PopBin};
use super::query::MarginalQuery;
use crate::blue::{node_estimate, solve_tree_blue, SolveReport};
use crate::error::{Error, Result};
use crate::integer::{bluedown, solve_top_down, BlueDownOptions};
use crate::linalg::Vector;
use crate::noise::{measure_tree, NoisyMeasurement};
use crate::schema::{GeoTree, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Blue,
    BlueDown,
    TopDown,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Blue => "blue",
            Algorithm::BlueDown => "bluedown",
            Algorithm::TopDown => "topdown",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blue" => Ok(Algorithm::Blue),
            "bluedown" => Ok(Algorithm::BlueDown),
            "topdown" => Ok(Algorithm::TopDown),
            other => Err(Error::Usage(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Multi-pass top-down from each node's own estimate, ignoring its subtree's measurements.
pub fn baseline_topdown(schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement], opts: BlueDownOptions) -> Result<SolveReport> {
    if nmf.len() != tree.len() {
        return Err(Error::Coverage(format!("{} measurements for {} nodes", nmf.len(), tree.len())));
    }
    let raw = tree
        .nodes
        .par_iter()
        .zip(nmf)
        .map(|(node, m)| {
            if m.node_id != node.id {
                return Err(crate::error::sizing(format!("measurement for {} out of order", m.node_id)));
            }
            node_estimate(&schema.workloads[node.level], m, &node.constraints, opts.solve.dense)
                .map_err(|e| e.at_node(node.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    solve_top_down(schema, tree, &raw, opts.multipass)
}

pub fn solve(algo: Algorithm, schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement], opts: BlueDownOptions) -> Result<SolveReport> {
    match algo {
        Algorithm::Blue => solve_tree_blue(schema, tree, nmf, opts.solve),
        Algorithm::BlueDown => bluedown(schema, tree, nmf, opts),
        Algorithm::TopDown => baseline_topdown(schema, tree, nmf, opts),
    }
}

/// One metrics line. `pop_bin` rows carry the total query restricted to
/// nodes whose true total falls in the bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub replicate: usize,
    pub algorithm: String,
    pub level: usize,
    pub query: String,
    pub raw_l1: f64,
    pub normalized: f64,
    pub bias: f64,
    pub pop_bin: Option<String>,
}

pub const CSV_HEADER: &str = "replicate,algorithm,level,query,raw_l1,normalized,bias,pop_bin";

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub replicates: usize,
    pub algorithms: Vec<Algorithm>,
    /// Replicate `r` is measured with seed `seed + r`.
    pub seed: u64,
    pub solve: BlueDownOptions,
    /// Levels scored; all levels when empty.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<(usize, Algorithm, String)>,
}

fn truth_vectors(tree: &GeoTree) -> Result<Vec<Vector>> {
    tree.nodes
        .iter()
        .map(|n| n.truth_vector().ok_or_else(|| Error::Coverage(format!("node {} has no truth", n.id))))
        .collect()
}

/// Rows for one solved replicate, normalized later.
fn score(tree: &GeoTree, values: &[Vector], truth: &[Vector], queries: &[MarginalQuery], levels: &[usize], bins: &[PopBin], replicate: usize, algo: Algorithm) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for &level in levels {
        let (est, tru) = level_pairs(tree, values, truth, level)?;
        for q in queries {
            rows.push(MetricsRow {
                replicate,
                algorithm: algo.name().into(),
                level,
                query: q.name.clone(),
                raw_l1: error_metric(&est, &tru, q)?,
                normalized: f64::NAN,
                bias: signed_error(&est, &tru, q)?,
                pop_bin: None,
            });
        }
        for s in bias_by_bin(&est, &tru, bins)? {
            rows.push(MetricsRow {
                replicate,
                algorithm: algo.name().into(),
                level,
                query: "total".into(),
                raw_l1: s.l1,
                normalized: f64::NAN,
                bias: s.bias,
                pop_bin: Some(s.bin.label()),
            });
        }
    }
    Ok(rows)
}

/// Measure, solve and score every replicate with every algorithm.
pub fn run_experiment(schema: &Schema, tree: &GeoTree, opts: &ExperimentOptions) -> Result<Experiment> {
    if opts.replicates == 0 || opts.algorithms.is_empty() {
        return Err(Error::Usage("need at least one replicate and one algorithm".into()));
    }
    let truth = truth_vectors(tree)?;
    let queries = MarginalQuery::defaults(&schema.buckets);
    let levels: Vec<usize> = if opts.levels.is_empty() { (0..schema.levels()).collect() } else { opts.levels.clone() };
    let max_pop = truth.iter().map(|t| t.sum()).fold(0.0, f64::max);
    let bins = power_of_ten_bins(max_pop);
    let per_rep = (0..opts.replicates)
        .into_par_iter()
        .map(|r| -> Result<(Vec<MetricsRow>, Vec<(usize, Algorithm, String)>)> {
            let nmf = measure_tree(schema, tree, opts.seed.wrapping_add(r as u64))?;
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for &algo in &opts.algorithms {
                match solve(algo, schema, tree, &nmf, opts.solve) {
                    Ok(rep) => rows.extend(score(tree, &rep.values, &truth, &queries, &levels, &bins, r, algo)?),
                    Err(e) => failures.push((r, algo, e.to_string())),
                }
            }
            Ok((rows, failures))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_rep {
        rows.extend(r);
        failures.extend(f);
    }
    let reference = if opts.algorithms.contains(&Algorithm::TopDown) { Algorithm::TopDown } else { opts.algorithms[0] };
    normalize(&mut rows, reference.name());
    Ok(Experiment { rows, failures })
}

/// Lower median, so that an even count still yields one of the values.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

type Cell = (usize, String, Option<String>);

/// Divide each raw error by the reference algorithm's median over replicates for the same cell.
pub fn normalize(rows: &mut [MetricsRow], reference: &str) {
    let mut by_cell: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.algorithm == reference) {
        by_cell.entry((r.level, r.query.clone(), r.pop_bin.clone())).or_default().push(r.raw_l1);
    }
    let medians: BTreeMap<Cell, f64> = by_cell.into_iter().filter_map(|(k, mut v)| lower_median(&mut v).map(|m| (k, m))).collect();
    for r in rows.iter_mut() {
        let m = medians.get(&(r.level, r.query.clone(), r.pop_bin.clone()));
        r.normalized = match m {
            None => f64::NAN,
            Some(&m) if m == 0.0 => {
                if r.raw_l1 == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            Some(&m) => r.raw_l1 / m,
        };
    }
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.replicate.to_string(),
            r.algorithm.clone(),
            r.level.to_string(),
            r.query.clone(),
            real(r.raw_l1),
            real(r.normalized),
            real(r.bias),
            r.pop_bin.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::Parse(format!("metrics: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse(format!("metrics header {:?}", header.join(","))));
    }
    rd.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(format!("metrics: {e}"))))
        .collect()
}

/// Mean raw and normalized error per (level, query, bin) and algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub level: usize,
    pub query: String,
    pub pop_bin: Option<String>,
    pub algorithm: String,
    pub replicates: usize,
    pub mean_l1: f64,
    pub median_normalized: f64,
    pub mean_bias: f64,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Cell, String), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(((r.level, r.query.clone(), r.pop_bin.clone()), r.algorithm.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(((level, query, pop_bin), algorithm), rs)| {
            let m = rs.len() as f64;
            let mut norm: Vec<f64> = rs.iter().map(|r| r.normalized).collect();
            SummaryRow {
                level,
                query,
                pop_bin,
                algorithm,
                replicates: rs.len(),
                mean_l1: rs.iter().map(|r| r.raw_l1).sum::<f64>() / m,
                median_normalized: lower_median(&mut norm).unwrap_or(f64::NAN),
                mean_bias: rs.iter().map(|r| r.bias).sum::<f64>() / m,
            }
        })
        .collect()
}
