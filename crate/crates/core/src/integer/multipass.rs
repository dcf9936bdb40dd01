//! Multi-pass solves per sibling group and the top-down drivers built on them.

use std::time::Instant;

use rayon::prelude::*;

use super::pass::{least_squares_pass, rounder_pass, Group, LsPass, RoundPass};
use super::weight::{weight_matrix, Weight};
use crate::blue::tree::{bottom_up, diagnose};
use crate::blue::{Estimate, SolveOptions, SolveReport};
use crate::error::{sizing, Error, Result};
use crate::linalg::Vector;
use crate::noise::NoisyMeasurement;
use crate::schema::{GeoTree, PassKind, Schema};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipassOptions {
    pub alpha: f64,
    /// Run the rounder phase; without it the output is the fractional stage.
    pub round: bool,
}

impl Default for MultipassOptions {
    fn default() -> Self {
        MultipassOptions {
            alpha: 1.0,
            round: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultipassOutput {
    pub fractional: Vec<Vector>,
    pub integral: Option<Vec<Vec<i64>>>,
    /// Solution after each least-squares pass, then after each rounder pass.
    pub ls_passes: Vec<Vec<Vector>>,
    pub round_passes: Vec<Vec<Vec<i64>>>,
}

impl MultipassOutput {
    /// Final values: integral when rounded.
    pub fn values(&self) -> Vec<Vector> {
        match &self.integral {
            Some(z) => z.iter().map(|v| Vector::from_iterator(v.len(), v.iter().map(|&x| x as f64))).collect(),
            None => self.fractional.clone(),
        }
    }
}

/// Least-squares passes, each pinning the projections of the ones before it,
/// then rounder passes over the final fractional solution with the pinned
/// projections reset. Least-squares passes are numbered `1..=ℓ` in errors and
/// rounder passes `ℓ+1..=2ℓ`.
pub fn multipass(g: &Group, estimates: &[&Estimate], passes: &[PassKind], opts: MultipassOptions) -> Result<MultipassOutput> {
    if passes.is_empty() {
        return Err(Error::Usage("empty pass list".into()));
    }
    if estimates.len() != g.ids.len() {
        return Err(sizing("one estimate per child required"));
    }
    let targets: Vec<Vector> = estimates.iter().map(|e| e.z.clone()).collect();
    let ell = passes.len();
    let mut consistency: Vec<PassKind> = Vec::new();
    let mut current: Option<Vec<Vector>> = None;
    let mut ls_passes = Vec::with_capacity(ell);
    for (j, &q) in passes.iter().enumerate() {
        let step = || -> Result<Vec<Vector>> {
            let weights: Vec<Weight> = estimates
                .iter()
                .zip(&g.constraints)
                .zip(&g.ids)
                .map(|((e, cs), id)| weight_matrix(&e.omega, cs, q, opts.alpha).map_err(|err| err.at_node(*id)))
                .collect::<Result<_>>()?;
            let p = LsPass {
                q,
                targets: &targets,
                weights: &weights,
                consistency: &consistency,
                previous: current.as_deref(),
            };
            Ok(least_squares_pass(g, &p)?.z)
        };
        let z = step().map_err(|e| e.at_pass(j + 1))?;
        ls_passes.push(z.clone());
        current = Some(z);
        consistency.push(q);
    }
    let fractional = current.expect("at least one pass");
    if !opts.round {
        return Ok(MultipassOutput {
            fractional,
            integral: None,
            ls_passes,
            round_passes: vec![],
        });
    }
    check_fractional(g, &fractional).map_err(|e| e.at_pass(ell + 1))?;
    let mut consistency: Vec<PassKind> = Vec::new();
    let mut current: Option<Vec<Vector>> = None;
    let mut round_passes: Vec<Vec<Vec<i64>>> = Vec::with_capacity(ell);
    for (j, &q) in passes.iter().enumerate() {
        let p = RoundPass {
            q,
            fractional: &fractional,
            consistency: &consistency,
            previous: current.as_deref(),
        };
        let z = rounder_pass(g, &p).map_err(|e| e.at_pass(ell + j + 1))?.z;
        current = Some(
            z.iter()
                .map(|v| Vector::from_iterator(v.len(), v.iter().map(|&x| x as f64)))
                .collect(),
        );
        round_passes.push(z);
        consistency.push(q);
    }
    Ok(MultipassOutput {
        fractional,
        integral: round_passes.last().cloned(),
        ls_passes,
        round_passes,
    })
}

/// The rounder expects its input to satisfy the constraint systems closely.
fn check_fractional(g: &Group, z: &[Vector]) -> Result<()> {
    const TOL: f64 = 1e-6;
    for (v, zv) in z.iter().enumerate() {
        let r = g.constraints[v].residuals(zv)?;
        let scale = 1.0 + zv.amax();
        if r.equality > TOL * scale || r.inequality > TOL * scale || zv.min() < -TOL * scale {
            return Err(Error::Infeasible(format!(
                "fractional {} misses its constraints (equality {:e}, inequality {:e})",
                g.ids[v], r.equality, r.inequality
            )));
        }
    }
    if let Some(p) = g.parent {
        let sum = z.iter().fold(Vector::zeros(p.len()), |acc, v| acc + v);
        if (&sum - p).amax() > TOL * (1.0 + p.amax()) {
            return Err(Error::Infeasible("fractional children miss the parent sum".into()));
        }
    }
    Ok(())
}

/// Top-down multi-pass over the tree from per-node starting estimates: the
/// root from its own start, then each sibling group given its finalized parent.
pub fn solve_top_down(schema: &Schema, tree: &GeoTree, starts: &[Estimate], opts: MultipassOptions) -> Result<SolveReport> {
    if starts.len() != tree.len() {
        return Err(sizing("one starting estimate per node required"));
    }
    let start = Instant::now();
    let n = tree.len();
    let mut values: Vec<Option<Vector>> = vec![None; n];
    let root = tree.root();
    let rnode = &tree.nodes[root];
    let g = Group {
        ids: vec![rnode.id.as_str()],
        constraints: vec![&rnode.constraints],
        parent: None,
    };
    let out = multipass(&g, &[&starts[root]], &schema.passes[rnode.level], opts).map_err(|e| e.at_node(rnode.id.clone()))?;
    values[root] = Some(out.values().remove(0));
    let levels = tree.levels();
    for level in &levels {
        let parents: Vec<usize> = level.iter().copied().filter(|&p| !tree.nodes[p].is_leaf()).collect();
        let done: Vec<Vec<Vector>> = parents
            .par_iter()
            .map(|&p| {
                let node = &tree.nodes[p];
                let kids = &node.children;
                let g = Group {
                    ids: kids.iter().map(|&c| tree.nodes[c].id.as_str()).collect(),
                    constraints: kids.iter().map(|&c| &tree.nodes[c].constraints).collect(),
                    parent: values[p].as_ref(),
                };
                let est: Vec<&Estimate> = kids.iter().map(|&c| &starts[c]).collect();
                let passes = &schema.passes[node.level + 1];
                multipass(&g, &est, passes, opts)
                    .map(|o| o.values())
                    .map_err(|e| e.at_node(node.id.clone()))
            })
            .collect::<Result<_>>()?;
        for (&p, vals) in parents.iter().zip(done) {
            for (&c, v) in tree.nodes[p].children.iter().zip(vals) {
                values[c] = Some(v);
            }
        }
    }
    let values: Vec<Vector> = values.into_iter().map(|v| v.expect("every node reached")).collect();
    let covariances = vec![None; n];
    let diagnostics = diagnose(tree, &values, &covariances);
    Ok(SolveReport {
        ids: tree.nodes.iter().map(|n| n.id.clone()).collect(),
        values,
        covariances,
        timings: vec![("top_down".into(), start.elapsed())],
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlueDownOptions {
    pub multipass: MultipassOptions,
    pub solve: SolveOptions,
}

/// Per-node estimates and bottom-up pass as in the linear estimator, with the
/// top-down pass replaced by multi-pass solves from the bottom-up estimates.
pub fn bluedown(schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement], opts: BlueDownOptions) -> Result<SolveReport> {
    let bu = bottom_up(schema, tree, nmf, opts.solve)?;
    let mut rep = solve_top_down(schema, tree, &bu.up, opts.multipass)?;
    let mut timings = bu.timings;
    timings.append(&mut rep.timings);
    rep.timings = timings;
    Ok(rep)
}
