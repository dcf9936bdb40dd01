use super::query::MarginalQuery;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::schema::GeoTree;

/// Mean over nodes of `‖Q x − Q x*‖₁`.
pub fn error_metric(estimates: &[&Vector], truth: &[&Vector], query: &MarginalQuery) -> Result<f64> {
    check(estimates, truth, query)?;
    let total: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(x, t)| (&query.selector * (*x - *t)).abs().sum())
        .sum();
    Ok(total / estimates.len() as f64)
}

/// Mean over nodes and query rows of `Q x − Q x*`.
pub fn signed_error(estimates: &[&Vector], truth: &[&Vector], query: &MarginalQuery) -> Result<f64> {
    check(estimates, truth, query)?;
    let total: f64 = estimates.iter().zip(truth).map(|(x, t)| (&query.selector * (*x - *t)).sum()).sum();
    Ok(total / (estimates.len() * query.selector.nrows()) as f64)
}

fn check(estimates: &[&Vector], truth: &[&Vector], query: &MarginalQuery) -> Result<()> {
    if estimates.is_empty() || estimates.len() != truth.len() {
        return Err(Error::Coverage(format!(
            "{} estimates against {} true vectors",
            estimates.len(),
            truth.len()
        )));
    }
    let n = query.selector.ncols();
    if estimates.iter().chain(truth).any(|v| v.len() != n) {
        return Err(crate::error::sizing(format!("query {} expects {n} buckets", query.name)));
    }
    Ok(())
}

/// Estimates and true vectors of every node at `level`, in tree order.
pub fn level_pairs<'a>(tree: &'a GeoTree, values: &'a [Vector], truth: &'a [Vector], level: usize) -> Result<(Vec<&'a Vector>, Vec<&'a Vector>)> {
    if values.len() != tree.len() || truth.len() != tree.len() {
        return Err(Error::Coverage(format!("estimates for {} of {} nodes", values.len(), tree.len())));
    }
    let idx: Vec<usize> = (0..tree.len()).filter(|&i| tree.nodes[i].level == level).collect();
    if idx.is_empty() {
        return Err(Error::Coverage(format!("no nodes at level {level}")));
    }
    Ok((idx.iter().map(|&i| &values[i]).collect(), idx.iter().map(|&i| &truth[i]).collect()))
}

/// Half-open population bin `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopBin {
    pub lo: f64,
    pub hi: f64,
}

impl PopBin {
    pub fn label(&self) -> String {
        format!("[{},{})", self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v < self.hi
    }
}

/// `[0,1), [1,10), [10,100), ...` up to the first edge above `max`.
pub fn power_of_ten_bins(max: f64) -> Vec<PopBin> {
    let mut out = vec![PopBin { lo: 0.0, hi: 1.0 }];
    let mut lo = 1.0;
    while lo <= max {
        out.push(PopBin { lo, hi: lo * 10.0 });
        lo *= 10.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub bin: PopBin,
    pub nodes: usize,
    /// Mean estimated minus true total.
    pub bias: f64,
    /// Mean absolute total error.
    pub l1: f64,
}

/// Signed and absolute total error per bin of true total; empty bins are skipped.
pub fn bias_by_bin(estimates: &[&Vector], truth: &[&Vector], bins: &[PopBin]) -> Result<Vec<BinStat>> {
    if estimates.len() != truth.len() {
        return Err(Error::Coverage("estimates and truth differ in length".into()));
    }
    let mut out = Vec::new();
    for &bin in bins {
        let errs: Vec<f64> = estimates
            .iter()
            .zip(truth)
            .filter(|(_, t)| bin.contains(t.sum()))
            .map(|(x, t)| x.sum() - t.sum())
            .collect();
        if errs.is_empty() {
            continue;
        }
        let m = errs.len() as f64;
        out.push(BinStat {
            bin,
            nodes: errs.len(),
            bias: errs.iter().sum::<f64>() / m,
            l1: errs.iter().map(|e| e.abs()).sum::<f64>() / m,
        });
    }
    Ok(out)
}
