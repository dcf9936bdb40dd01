use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::estimate::{aggregate_children, combine, Covariance, Estimate};
use super::gls::node_estimate;
use crate::error::{sizing, Error, Result};
use crate::linalg::Vector;
use crate::noise::NoisyMeasurement;
use crate::schema::{GeoTree, Schema};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Carry dense covariances instead of succinct ones.
    pub dense: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    /// Largest equality violation `|R x - r|` over nodes.
    pub max_constraint_residual: f64,
    /// Largest `|x_p - Σ x_c|∞ / (1 + |x_p|∞)` over internal nodes.
    pub max_consistency_residual: f64,
    /// Smallest covariance eigenvalue relative to the largest, over nodes.
    pub min_cov_eigenvalue: f64,
}

/// Per-node outputs of a solver, in tree order.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub ids: Vec<String>,
    pub values: Vec<Vector>,
    pub covariances: Vec<Option<Covariance>>,
    pub timings: Vec<(String, Duration)>,
    pub diagnostics: Diagnostics,
}

impl SolveReport {
    /// Values as integers, if every entry is integral.
    pub fn integers(&self) -> Option<Vec<Vec<i64>>> {
        self.values
            .iter()
            .map(|v| {
                v.iter()
                    .map(|&x| (x.fract() == 0.0 && x.abs() < 9e15).then_some(x as i64))
                    .collect()
            })
            .collect()
    }

    pub fn estimate(&self, i: usize) -> Option<Estimate> {
        self.covariances[i].as_ref().map(|c| Estimate {
            z: self.values[i].clone(),
            omega: c.clone(),
        })
    }
}

/// Per-node estimates and the bottom-up pass.
#[derive(Debug, Clone)]
pub struct BottomUp {
    /// `(ẑ_v, Ω_v)`: node's own measurements under its equalities.
    pub raw: Vec<Estimate>,
    /// `(ẑ⇑_v, Ω⇑_v)`: everything measured in the subtree of `v`.
    pub up: Vec<Estimate>,
    /// `(ẑ↑_v, Ω↑_v)`: sum of the children's `up`, internal nodes only.
    pub agg: Vec<Option<Estimate>>,
    pub timings: Vec<(String, Duration)>,
}

pub(crate) fn par_level<T: Send>(
    level: &[usize],
    tree: &GeoTree,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    level
        .par_iter()
        .map(|&i| f(i).map_err(|e| e.at_node(tree.nodes[i].id.clone())))
        .collect()
}

pub fn bottom_up(
    schema: &Schema,
    tree: &GeoTree,
    nmf: &[NoisyMeasurement],
    opts: SolveOptions,
) -> Result<BottomUp> {
    if nmf.len() != tree.len() {
        return Err(Error::Coverage(format!(
            "{} measurements for {} nodes",
            nmf.len(),
            tree.len()
        )));
    }
    let n = tree.len();
    let levels = tree.levels();
    let start = Instant::now();
    let all: Vec<usize> = (0..n).collect();
    let raw = par_level(&all, tree, |i| {
        let node = &tree.nodes[i];
        if nmf[i].node_id != node.id {
            return Err(sizing(format!("measurement for {} out of order", nmf[i].node_id)));
        }
        node_estimate(&schema.workloads[node.level], &nmf[i], &node.constraints, opts.dense)
    })?;
    let t_node = start.elapsed();

    let start = Instant::now();
    let mut up: Vec<Option<Estimate>> = vec![None; n];
    let mut agg: Vec<Option<Estimate>> = vec![None; n];
    for level in levels.iter().rev() {
        let done = par_level(level, tree, |i| {
            let node = &tree.nodes[i];
            if node.is_leaf() {
                return Ok((raw[i].clone(), None));
            }
            let kids: Vec<Estimate> = node
                .children
                .iter()
                .map(|&c| up[c].clone().expect("children finished first"))
                .collect();
            let sum = aggregate_children(&kids)?;
            Ok((combine(&raw[i], &sum)?, Some(sum)))
        })?;
        for (&i, (u, a)) in level.iter().zip(done) {
            up[i] = Some(u);
            agg[i] = a;
        }
    }
    let t_up = start.elapsed();
    Ok(BottomUp {
        raw,
        up: up.into_iter().map(|u| u.expect("every node visited")).collect(),
        agg,
        timings: vec![("per_node".into(), t_node), ("bottom_up".into(), t_up)],
    })
}

/// The best linear unbiased estimate of every node's vector given all measurements.
pub fn solve_tree_blue(
    schema: &Schema,
    tree: &GeoTree,
    nmf: &[NoisyMeasurement],
    opts: SolveOptions,
) -> Result<SolveReport> {
    let bu = bottom_up(schema, tree, nmf, opts)?;
    let n = tree.len();
    let start = Instant::now();
    let mut finals: Vec<Option<Estimate>> = vec![None; n];
    // (ẑ⇓_v, Ω⇓_v): everything except the strict descendants of v.
    let mut down_all: Vec<Option<Estimate>> = vec![None; n];
    let root = tree.root();
    finals[root] = Some(bu.up[root].clone());
    down_all[root] = Some(bu.raw[root].clone());
    for level in tree.levels().iter().skip(1) {
        let done = par_level(level, tree, |v| {
            let p = tree.nodes[v].parent.expect("non-root");
            let pd = down_all[p].as_ref().expect("parent finished");
            let agg = bu.agg[p].as_ref().expect("parent is internal");
            let up = &bu.up[v];
            let down = Estimate::new(
                &pd.z - &agg.z + &up.z,
                pd.omega.add(&agg.omega)?.sub(&up.omega)?.symmetrize(),
            )?;
            let d_all = if tree.nodes[v].is_leaf() {
                None
            } else {
                Some(combine(&bu.raw[v], &down)?)
            };
            Ok((combine(up, &down)?, d_all))
        })?;
        for (&v, (f, d)) in level.iter().zip(done) {
            finals[v] = Some(f);
            down_all[v] = d;
        }
    }
    let mut timings = bu.timings;
    timings.push(("top_down".into(), start.elapsed()));
    let estimates: Vec<Estimate> = finals.into_iter().map(|f| f.expect("visited")).collect();
    let values: Vec<Vector> = estimates.iter().map(|e| e.z.clone()).collect();
    let covariances: Vec<Option<Covariance>> = estimates.into_iter().map(|e| Some(e.omega)).collect();
    let diagnostics = diagnose(tree, &values, &covariances);
    Ok(SolveReport {
        ids: tree.nodes.iter().map(|n| n.id.clone()).collect(),
        values,
        covariances,
        timings,
        diagnostics,
    })
}

pub(crate) fn diagnose(tree: &GeoTree, values: &[Vector], covs: &[Option<Covariance>]) -> Diagnostics {
    let mut diag = Diagnostics {
        min_cov_eigenvalue: f64::INFINITY,
        ..Diagnostics::default()
    };
    for (i, node) in tree.nodes.iter().enumerate() {
        let z = &values[i];
        if let Ok(r) = node.constraints.residuals(z) {
            diag.max_constraint_residual = diag.max_constraint_residual.max(r.equality);
        }
        if let Some(omega) = &covs[i] {
            let top = omega.max_abs_eigenvalue();
            if top > 0.0 {
                diag.min_cov_eigenvalue = diag.min_cov_eigenvalue.min(omega.min_eigenvalue() / top);
            }
        }
        if !node.is_leaf() {
            let mut sum = Vector::zeros(z.len());
            for &c in &node.children {
                sum += &values[c];
            }
            let r = (z - sum).amax() / (1.0 + z.amax());
            diag.max_consistency_residual = diag.max_consistency_residual.max(r);
        }
    }
    if diag.min_cov_eigenvalue == f64::INFINITY {
        diag.min_cov_eigenvalue = 0.0;
    }
    diag
}
