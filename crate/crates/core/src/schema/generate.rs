use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric};

use super::constraint::ConstraintSet;
use super::spec::{InstanceSpec, Schema};
use super::tree::{GeoNode, GeoTree};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Per-node bounds on the population of each level of the bounded feature.
/// `None` as the upper bound means unbounded.
#[derive(Debug, Clone)]
struct TypeBounds {
    lo: Vec<i64>,
    hi: Vec<Option<i64>>,
}

/// Synthesize a tree with ground truth and truth-derived constraints.
pub fn build_instance(spec: InstanceSpec) -> Result<(Schema, GeoTree)> {
    let schema = Schema::new(spec)?;
    let policy = &schema.spec.constraints;
    let levels = schema.levels();
    let (k, d) = (schema.k(), schema.d());

    for (name, p) in [
        ("facility_prob", policy.facility_prob),
        ("cell_zero_prob", policy.cell_zero_prob),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Generation(format!("{name} = {p} is not a probability")));
        }
    }
    if policy.fixed_count.is_none() && !(policy.mean_count >= 1.0 && policy.mean_count.is_finite()) {
        return Err(Error::Generation("mean_count must be at least 1".into()));
    }
    if let Some(&l) = policy.total_levels.iter().find(|&&l| l >= levels) {
        return Err(Error::Generation(format!("total level {l} beyond depth {levels}")));
    }
    let bounded = match &policy.bounded_feature {
        None => None,
        Some(name) => {
            let f = schema.buckets.asym_feature(name).ok_or_else(|| {
                Error::Generation(format!("bounded feature {name} is not an asymmetric feature"))
            })?;
            let feature = &schema.buckets.asym[f];
            if feature.card() > 16 {
                return Err(Error::Generation("bounded feature has more than 16 levels".into()));
            }
            let mut is_bounded = vec![false; feature.card()];
            for label in &policy.bounded_levels {
                let l = feature.level_index(label).ok_or_else(|| {
                    Error::Generation(format!("unknown level {label} of {name}"))
                })?;
                is_bounded[l] = true;
            }
            Some((f, is_bounded))
        }
    };
    // Level of the bounded feature for each asymmetric bucket.
    let type_of: Vec<usize> = match &bounded {
        Some((f, _)) => (0..k).map(|a| schema.buckets.asym_levels(a)[*f]).collect(),
        None => vec![0; k],
    };
    let types = bounded.as_ref().map_or(1, |(_, b)| b.len());
    let is_bounded = |t: usize| bounded.as_ref().is_some_and(|(_, b)| b[t]);

    // Skeleton, breadth first.
    let mut ids = vec![("0".to_string(), 0usize, None::<usize>)];
    let mut frontier = vec![0usize];
    for (level, &arity) in schema.spec.level_arities.iter().enumerate() {
        let mut next = Vec::new();
        for &p in &frontier {
            for c in 0..arity {
                let id = format!("{}/{c}", ids[p].0);
                ids.push((id, level + 1, Some(p)));
                next.push(ids.len() - 1);
            }
        }
        frontier = next;
    }
    let count = ids.len();
    let mut children = vec![Vec::new(); count];
    for (i, (_, _, p)) in ids.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }

    // Leaf truth.
    let mut rng = ChaCha20Rng::seed_from_u64(schema.spec.seed);
    let mut slack_rng = ChaCha20Rng::seed_from_u64(schema.spec.seed);
    slack_rng.set_stream(1);
    let geometric = Geometric::new(1.0 / policy.mean_count.max(1.0))
        .map_err(|e| Error::Generation(e.to_string()))?;
    let mut truth: Vec<Vec<i64>> = vec![Vec::new(); count];
    for i in 0..count {
        if !children[i].is_empty() {
            continue;
        }
        let present: Vec<bool> = (0..types)
            .map(|t| !is_bounded(t) || rng.random_bool(policy.facility_prob))
            .collect();
        let mut x = vec![0i64; k * d];
        for a in 0..k {
            for s in 0..d {
                x[a * d + s] = match policy.fixed_count {
                    Some(c) => c as i64,
                    None if !present[type_of[a]] => 0,
                    None if rng.random_bool(policy.cell_zero_prob) => 0,
                    None => 1 + geometric.sample(&mut rng) as i64,
                };
            }
        }
        truth[i] = x;
    }
    for i in (0..count).rev() {
        if !children[i].is_empty() {
            let mut x = vec![0i64; k * d];
            for &c in &children[i] {
                for (xb, cb) in x.iter_mut().zip(&truth[c]) {
                    *xb += cb;
                }
            }
            truth[i] = x;
        }
    }

    let type_totals = |x: &[i64]| -> Vec<i64> {
        let mut tt = vec![0i64; types];
        for a in 0..k {
            tt[type_of[a]] += x[a * d..(a + 1) * d].iter().sum::<i64>();
        }
        tt
    };
    let type_row = |set: &[usize]| -> Vec<f64> {
        let mut row = vec![0.0; k * d];
        for a in 0..k {
            if set.contains(&type_of[a]) {
                row[a * d..(a + 1) * d].fill(1.0);
            }
        }
        row
    };

    // Constraints, bottom up.
    let mut bounds: Vec<TypeBounds> = vec![
        TypeBounds {
            lo: Vec::new(),
            hi: Vec::new()
        };
        count
    ];
    let mut constraints: Vec<ConstraintSet> = vec![ConstraintSet::empty(k, d); count];
    for i in (0..count).rev() {
        let level = ids[i].1;
        let x = &truth[i];
        let tt = type_totals(x);
        let mut cs = ConstraintSet::empty(k, d);

        if policy.total_levels.contains(&level) {
            cs.push_r2(&vec![1.0; k], x.iter().sum::<i64>() as f64)?;
        }
        for t in 0..types {
            if is_bounded(t) && tt[t] == 0 {
                for a in (0..k).filter(|&a| type_of[a] == t) {
                    let mut row = vec![0.0; k];
                    row[a] = 1.0;
                    cs.push_r1(&row, &vec![0.0; d])?;
                }
            }
        }

        let tb = if children[i].is_empty() {
            let mut lo = vec![0i64; types];
            let mut hi = vec![None; types];
            for t in 0..types {
                if is_bounded(t) {
                    if tt[t] > 0 {
                        lo[t] = 1;
                        hi[t] = Some(tt[t] + slack_rng.random_range(0..=policy.bound_slack) as i64);
                    } else {
                        hi[t] = Some(0);
                    }
                }
            }
            TypeBounds { lo, hi }
        } else {
            let mut lo = vec![0i64; types];
            let mut hi = vec![Some(0i64); types];
            for &c in &children[i] {
                for t in 0..types {
                    lo[t] += bounds[c].lo[t];
                    hi[t] = match (hi[t], bounds[c].hi[t]) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
            }
            TypeBounds { lo, hi }
        };
        for t in 0..types {
            if is_bounded(t) && tt[t] > 0 {
                let row = type_row(&[t]);
                if let Some(h) = tb.hi[t] {
                    cs.push_ineq(&row, h as f64)?;
                }
                let neg: Vec<f64> = row.iter().map(|v| -v).collect();
                cs.push_ineq(&neg, -(tb.lo[t] as f64))?;
            }
        }

        if !children[i].is_empty() {
            add_split_inequalities(&mut cs, &children[i], &truth, &constraints, &bounds, types, &type_row, &type_totals)?;
            add_implied_equalities(&mut cs, &children[i], &constraints, x)?;
        }
        cs.normalize().map_err(|e| Error::Generation(format!("node {}: {e}", ids[i].0)))?;
        if !cs.holds_exactly(x) {
            return Err(Error::Generation(format!(
                "node {}: truth violates its constraints",
                ids[i].0
            )));
        }
        bounds[i] = tb;
        constraints[i] = cs;
    }

    let parent_ids: Vec<Option<String>> = ids
        .iter()
        .map(|(_, _, p)| p.map(|p| ids[p].0.clone()))
        .collect();
    let parts = ids
        .into_iter()
        .zip(parent_ids)
        .enumerate()
        .map(|(i, ((id, level, _), parent_id))| {
            (
                GeoNode {
                    id,
                    level,
                    parent: None,
                    children: Vec::new(),
                    truth: Some(std::mem::take(&mut truth[i])),
                    constraints: std::mem::replace(&mut constraints[i], ConstraintSet::empty(k, d)),
                },
                parent_id,
            )
        })
        .collect();
    let tree = GeoTree::from_parts(parts)?;
    Ok((schema, tree))
}

/// Upper bounds on subsets of bounded-feature levels that every split of the
/// node among children respecting their totals and bounds must satisfy.
///
/// For a subset `S`, child `c` can hold at most `min(T_c - lo_c(Sᶜ), hi_c(S))`
/// of it when its total `T_c` is fixed, else `hi_c(S)`.
#[allow(clippy::too_many_arguments)]
fn add_split_inequalities(
    cs: &mut ConstraintSet,
    children: &[usize],
    truth: &[Vec<i64>],
    constraints: &[ConstraintSet],
    bounds: &[TypeBounds],
    types: usize,
    type_row: &dyn Fn(&[usize]) -> Vec<f64>,
    type_totals: &dyn Fn(&[i64]) -> Vec<i64>,
) -> Result<()> {
    if types < 2 {
        return Ok(());
    }
    let has_total = |c: usize| {
        let r2 = &constraints[c].r2;
        (0..r2.nrows()).any(|i| r2.row(i).iter().all(|&v| v == 1.0))
    };
    if !children.iter().any(|&c| has_total(c)) {
        return Ok(());
    }
    for mask in 1..(1u32 << types) - 1 {
        let set: Vec<usize> = (0..types).filter(|t| mask & (1 << t) != 0).collect();
        let mut cap = Some(0i64);
        let mut plain = Some(0i64);
        for &c in children {
            let b = &bounds[c];
            let hi_s = set.iter().try_fold(0i64, |acc, &t| b.hi[t].map(|h| acc + h));
            let lo_rest: i64 = (0..types).filter(|t| !set.contains(t)).map(|t| b.lo[t]).sum();
            let with_total = if has_total(c) {
                let total: i64 = type_totals(&truth[c]).iter().sum();
                Some(total - lo_rest)
            } else {
                None
            };
            let term = match (hi_s, with_total) {
                (Some(h), Some(t)) => Some(h.min(t)),
                (Some(h), None) => Some(h),
                (None, t) => t,
            };
            cap = cap.zip(term).map(|(a, b)| a + b);
            plain = plain.zip(hi_s).map(|(a, b)| a + b);
        }
        if let Some(cap) = cap {
            if plain.is_none_or(|p| cap < p) {
                cs.push_ineq(&type_row(&set), cap as f64)?;
            }
        }
    }
    Ok(())
}

/// Add equalities on the node implied by the equalities of all its children.
fn add_implied_equalities(
    cs: &mut ConstraintSet,
    children: &[usize],
    constraints: &[ConstraintSet],
    x: &[i64],
) -> Result<()> {
    let (k, d) = (cs.k, cs.d);
    let intersect = |part: &dyn Fn(&ConstraintSet) -> Matrix| {
        let mut acc = part(&constraints[children[0]]);
        for &c in &children[1..] {
            if acc.nrows() == 0 {
                break;
            }
            acc = linalg::row_space_intersection(&acc, &part(&constraints[c]));
        }
        linalg::rref(&acc, 1e-9)
    };
    let p0_rows = intersect(&|c: &ConstraintSet| c.r1.clone());
    let p1_rows = intersect(&|c: &ConstraintSet| c.r_tilde());
    for row in p0_rows.row_iter() {
        let v: Vec<f64> = row.iter().copied().collect();
        let vals: Vec<f64> = (0..d)
            .map(|s| (0..k).map(|a| v[a] * x[a * d + s] as f64).sum())
            .collect();
        cs.push_r1(&v, &vals)?;
    }
    for row in p1_rows.row_iter() {
        let v: Vec<f64> = row.iter().copied().collect();
        let val = (0..k)
            .map(|a| v[a] * x[a * d..(a + 1) * d].iter().sum::<i64>() as f64)
            .sum();
        cs.push_r2(&v, val)?;
    }
    Ok(())
}
