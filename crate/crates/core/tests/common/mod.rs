#![allow(dead_code)]

use hierblue::linalg::{Matrix, Vector};
use hierblue::noise::NoisyMeasurement;
use hierblue::schema::{
    ConstraintSet, Feature, GeoNode, GeoTree, InstanceSpec, QueryKind, QuerySpec, Schema,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Whole-tree problem solved densely with a null-space parametrization.
pub struct DenseOracle {
    pub x: Vec<Vector>,
    pub cov_blocks: Vec<Matrix>,
}

/// Orthonormal null-space basis and a particular solution of `A x = b`,
/// from the eigendecomposition of `AᵀA`.
fn affine_solutions(a: &Matrix, b: &Vector) -> (Vector, Matrix) {
    let n = a.ncols();
    if a.nrows() == 0 {
        return (Vector::zeros(n), Matrix::identity(n, n));
    }
    // Work with AᵀA's eigenvectors so wide/deficient systems are handled uniformly.
    let gram = a.transpose() * a;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax().max(1.0);
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-9 * top).collect();
    let range: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-9 * top).collect();
    let mut nb = Matrix::zeros(n, null.len());
    for (j, &i) in null.iter().enumerate() {
        nb.set_column(j, &eig.eigenvectors.column(i));
    }
    // Particular solution in the range of Aᵀ: x0 = V diag(1/λ) Vᵀ Aᵀ b.
    let mut x0 = Vector::zeros(n);
    let atb = a.transpose() * b;
    for &i in &range {
        let v = eig.eigenvectors.column(i);
        x0 += v * (v.dot(&atb) / eig.eigenvalues[i]);
    }
    (x0, nb)
}

pub fn dense_oracle(schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement]) -> DenseOracle {
    let n = schema.n();
    let nodes = tree.len();
    let total = n * nodes;
    // Stacked workload, variances and measurements.
    let mut w_rows: Vec<Vec<f64>> = Vec::new();
    let mut var = Vec::new();
    let mut y = Vec::new();
    for (i, node) in tree.nodes.iter().enumerate() {
        let wl = &schema.workloads[node.level];
        let (wd, _) = wl.dense();
        let d = wl.d;
        let m = &nmf[i];
        let mut vars = Vec::new();
        for r in 0..wl.w1.nrows() {
            vars.extend(std::iter::repeat_n(m.sigma1[r], d));
        }
        vars.extend(m.sigma2.iter().copied());
        let ys: Vec<f64> = m.y1.iter().chain(m.y2.iter()).copied().collect();
        for r in 0..wd.nrows() {
            let mut row = vec![0.0; total];
            for c in 0..n {
                row[i * n + c] = wd[(r, c)];
            }
            w_rows.push(row);
            var.push(vars[r]);
            y.push(ys[r]);
        }
    }
    // Equalities: node constraints and parent = sum of children.
    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    let mut rv = Vec::new();
    for (i, node) in tree.nodes.iter().enumerate() {
        let req = node.constraints.req();
        let rval = node.constraints.rval();
        for r in 0..req.nrows() {
            let mut row = vec![0.0; total];
            for c in 0..n {
                row[i * n + c] = req[(r, c)];
            }
            r_rows.push(row);
            rv.push(rval[r]);
        }
        if !node.is_leaf() {
            for b in 0..n {
                let mut row = vec![0.0; total];
                row[i * n + b] = 1.0;
                for &c in &node.children {
                    row[c * n + b] = -1.0;
                }
                r_rows.push(row);
                rv.push(0.0);
            }
        }
    }
    let to_m = |rows: &[Vec<f64>]| {
        Matrix::from_row_iterator(rows.len(), total, rows.iter().flatten().copied())
    };
    let w = to_m(&w_rows);
    let r = to_m(&r_rows);
    let (x0, nb) = affine_solutions(&r, &Vector::from_vec(rv));
    let winv = Vector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v));
    let wn = &w * &nb;
    let mut wn_s = wn.clone();
    for (i, mut row) in wn_s.row_iter_mut().enumerate() {
        row *= winv[i];
    }
    let info = wn.transpose() * &wn_s;
    let info_inv = info.try_inverse().expect("identifiable whole-tree problem");
    let resid = Vector::from_vec(y) - &w * &x0;
    let u = &info_inv * (wn_s.transpose() * resid);
    let x = x0 + &nb * u;
    let cov = &nb * info_inv * nb.transpose();
    DenseOracle {
        x: (0..nodes).map(|i| x.rows(i * n, n).into_owned()).collect(),
        cov_blocks: (0..nodes)
            .map(|i| cov.view((i * n, i * n), (n, n)).into_owned())
            .collect(),
    }
}

/// Random small instance: tree of at most 15 nodes, |B| ≤ 6, random equalities
/// including structural zeros and a root total, and continuous measurements.
pub fn random_instance(seed: u64) -> (Schema, GeoTree, Vec<NoisyMeasurement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3usize);
    let d = rng.random_range(1..=2usize);
    let asym = Feature {
        name: "a".into(),
        levels: (0..k).map(|i| format!("a{i}")).collect(),
    };
    let sym = Feature {
        name: "s".into(),
        levels: (0..d).map(|i| format!("s{i}")).collect(),
    };
    let depth = [1, 2, 2, 3, 3, 3][rng.random_range(0..6usize)];
    let arities: Vec<usize> = match depth {
        1 => vec![],
        2 => vec![rng.random_range(1..=4)],
        _ => vec![rng.random_range(1..=3), rng.random_range(1..=3)],
    };
    let mut queries = vec![QuerySpec::new("DETAILED", QueryKind::Individual, &["a"])];
    if rng.random_bool(0.7) {
        queries.push(QuerySpec::new("TOTAL", QueryKind::Aggregate, &[]));
    }
    if d > 1 && rng.random_bool(0.5) {
        queries.push(QuerySpec::new("SYM", QueryKind::Individual, &[]));
    }
    for q in &mut queries {
        let v: Vec<f64> = (0..depth).map(|_| rng.random_range(0.5..4.0)).collect();
        q.variance = hierblue::schema::query::Variance::PerLevel(v);
    }
    let spec = InstanceSpec {
        seed,
        level_arities: arities.clone(),
        asym_features: vec![asym],
        sym_features: vec![sym],
        queries,
        passes: None,
        constraints: Default::default(),
        alpha: 1.0,
    };
    let schema = Schema::new(spec).unwrap();
    let n = k * d;

    // Truth to derive consistent right-hand sides.
    let mut ids: Vec<(String, usize, Option<String>)> = vec![("0".into(), 0, None)];
    let mut frontier = vec!["0".to_string()];
    for (l, &a) in arities.iter().enumerate() {
        let mut next = Vec::new();
        for p in &frontier {
            for c in 0..a {
                let id = format!("{p}/{c}");
                ids.push((id.clone(), l + 1, Some(p.clone())));
                next.push(id);
            }
        }
        frontier = next;
    }
    let mut parts = Vec::new();
    let mut truths: std::collections::HashMap<String, Vec<i64>> = Default::default();
    for (id, _, _) in ids.iter().rev() {
        let kids: Vec<&String> = ids
            .iter()
            .filter(|(_, _, p)| p.as_deref() == Some(id.as_str()))
            .map(|(c, _, _)| c)
            .collect();
        let t = if kids.is_empty() {
            let mut t: Vec<i64> = (0..n).map(|_| rng.random_range(0..6)).collect();
            if rng.random_bool(0.3) {
                let a = rng.random_range(0..k);
                t[a * d..(a + 1) * d].fill(0);
            }
            t
        } else {
            let mut s = vec![0i64; n];
            for c in kids {
                for (a, b) in s.iter_mut().zip(&truths[c]) {
                    *a += b;
                }
            }
            s
        };
        truths.insert(id.clone(), t);
    }
    for (id, level, parent) in &ids {
        let t = &truths[id];
        let mut cs = ConstraintSet::empty(k, d);
        if *level == 0 {
            cs.push_r2(&vec![1.0; k], t.iter().sum::<i64>() as f64).unwrap();
        }
        // Structural zeros on empty slices, otherwise a random pinned slice.
        let empty: Vec<usize> = (0..k)
            .filter(|&a| t[a * d..(a + 1) * d].iter().all(|&v| v == 0))
            .collect();
        if !empty.is_empty() && rng.random_bool(0.7) {
            let a = empty[rng.random_range(0..empty.len())];
            let mut row = vec![0.0; k];
            row[a] = 1.0;
            cs.push_r1(&row, &vec![0.0; d]).unwrap();
        } else if rng.random_bool(0.3) {
            let a = rng.random_range(0..k);
            let mut row = vec![0.0; k];
            row[a] = 1.0;
            let vals: Vec<f64> = (0..d).map(|s| t[a * d + s] as f64).collect();
            cs.push_r1(&row, &vals).unwrap();
        }
        if rng.random_bool(0.3) {
            let row: Vec<f64> = (0..k).map(|_| rng.random_range(0..2) as f64).collect();
            if row.iter().any(|&v| v != 0.0) {
                let val: f64 = (0..k)
                    .map(|a| row[a] * t[a * d..(a + 1) * d].iter().sum::<i64>() as f64)
                    .sum();
                cs.push_r2(&row, val).unwrap();
            }
        }
        cs.normalize().unwrap();
        parts.push((
            GeoNode {
                id: id.clone(),
                level: *level,
                parent: None,
                children: vec![],
                truth: Some(t.clone()),
                constraints: cs,
            },
            parent.clone(),
        ));
    }
    let mut tree = GeoTree::from_parts(parts).unwrap();
    close_implied(&mut tree);

    let nmf = tree
        .nodes
        .iter()
        .map(|node| {
            let w = &schema.workloads[node.level];
            let (y1, y2) = w.answer(&node.truth_vector().unwrap()).unwrap();
            let noise = |v: &Vector, rng: &mut ChaCha8Rng| {
                Vector::from_iterator(v.len(), v.iter().map(|x| x + rng.random_range(-2.0..2.0)))
            };
            NoisyMeasurement {
                node_id: node.id.clone(),
                y1: noise(&y1, &mut rng),
                y2: noise(&y2, &mut rng),
                sigma1: w.sigma1.clone(),
                sigma2: w.sigma2.clone(),
            }
        })
        .collect();
    (schema, tree, nmf)
}

/// Add to each node the equalities implied by all of its children, bottom up.
pub fn close_implied(tree: &mut GeoTree) {
    use hierblue::linalg::{rref, row_space_intersection};
    for i in (0..tree.len()).rev() {
        let kids = tree.nodes[i].children.clone();
        if kids.is_empty() {
            continue;
        }
        let t = tree.nodes[i].truth.clone().unwrap();
        let (k, d) = (tree.nodes[i].constraints.k, tree.nodes[i].constraints.d);
        let mut p0 = tree.nodes[kids[0]].constraints.r1.clone();
        let mut p1 = tree.nodes[kids[0]].constraints.r_tilde();
        for &c in &kids[1..] {
            p0 = row_space_intersection(&p0, &tree.nodes[c].constraints.r1);
            p1 = row_space_intersection(&p1, &tree.nodes[c].constraints.r_tilde());
        }
        let cs = &mut tree.nodes[i].constraints;
        for row in rref(&p0, 1e-9).row_iter() {
            let v: Vec<f64> = row.iter().copied().collect();
            let vals: Vec<f64> = (0..d)
                .map(|s| (0..k).map(|a| v[a] * t[a * d + s] as f64).sum())
                .collect();
            cs.push_r1(&v, &vals).unwrap();
        }
        for row in rref(&p1, 1e-9).row_iter() {
            let v: Vec<f64> = row.iter().copied().collect();
            let val = (0..k)
                .map(|a| v[a] * t[a * d..(a + 1) * d].iter().sum::<i64>() as f64)
                .sum();
            cs.push_r2(&v, val).unwrap();
        }
        cs.normalize().unwrap();
    }
}

/// Exact answers for every measured row.
pub fn noiseless(schema: &Schema, tree: &GeoTree, nmf: &[NoisyMeasurement]) -> Vec<NoisyMeasurement> {
    tree.nodes
        .iter()
        .zip(nmf)
        .map(|(node, m)| {
            let (y1, y2) = schema.workloads[node.level].answer(&node.truth_vector().unwrap()).unwrap();
            NoisyMeasurement { y1, y2, ..m.clone() }
        })
        .collect()
}

/// First violation of integrality, nonnegativity, node constraints or
/// parent sums, checked in exact integer arithmetic.
pub fn feasibility_violation(tree: &GeoTree, values: &[Vector]) -> Option<String> {
    let mut ints: Vec<Vec<i64>> = Vec::with_capacity(values.len());
    for (node, v) in tree.nodes.iter().zip(values) {
        if v.iter().any(|x| x.fract() != 0.0) {
            return Some(format!("{} is not integral", node.id));
        }
        let z: Vec<i64> = v.iter().map(|&x| x as i64).collect();
        if z.iter().any(|&x| x < 0) {
            return Some(format!("{} has a negative count", node.id));
        }
        let cs = &node.constraints;
        let req = cs.req();
        let rval = cs.rval();
        for r in 0..req.nrows() {
            let row = req.row(r);
            let ok = if row.iter().all(|c| c.fract() == 0.0) && rval[r].fract() == 0.0 {
                let lhs: i64 = (0..z.len()).map(|c| row[c] as i64 * z[c]).sum();
                lhs as f64 == rval[r]
            } else {
                // Rows from row-space reduction can carry fractional coefficients.
                let lhs: f64 = (0..z.len()).map(|c| row[c] * z[c] as f64).sum();
                (lhs - rval[r]).abs() <= 1e-9 * (1.0 + rval[r].abs())
            };
            if !ok {
                return Some(format!("{} misses equality {r}", node.id));
            }
        }
        for r in 0..cs.g.nrows() {
            let lhs: i64 = (0..z.len()).map(|c| cs.g[(r, c)] as i64 * z[c]).sum();
            if lhs as f64 > cs.g_vals[r] {
                return Some(format!("{} misses inequality {r}", node.id));
            }
        }
        ints.push(z);
    }
    for (i, node) in tree.nodes.iter().enumerate() {
        if node.is_leaf() {
            continue;
        }
        for b in 0..ints[i].len() {
            let s: i64 = node.children.iter().map(|&c| ints[c][b]).sum();
            if s != ints[i][b] {
                return Some(format!("children of {} miss bucket {b}", node.id));
            }
        }
    }
    None
}

/// A small sibling group with a feasible fractional solution to round.
pub struct RoundingCase {
    pub ids: Vec<String>,
    pub constraints: Vec<ConstraintSet>,
    pub parent: Option<Vector>,
    pub fractional: Vec<Vector>,
    pub q: hierblue::schema::PassKind,
    /// Earlier rounded totals to stay consistent with, if any.
    pub pinned: Option<Vec<Vector>>,
}

impl RoundingCase {
    pub fn group(&self) -> hierblue::integer::Group<'_> {
        hierblue::integer::Group {
            ids: self.ids.iter().map(String::as_str).collect(),
            constraints: self.constraints.iter().collect(),
            parent: self.parent.as_ref(),
        }
    }

    pub fn binaries(&self) -> usize {
        self.fractional.iter().map(|v| v.len()).sum()
    }
}

/// Random group with at most `max_binaries` buckets in total.
pub fn rounding_case(seed: u64, max_binaries: usize) -> RoundingCase {
    use hierblue::integer::{least_squares_pass, rounder_pass, LsPass, RoundPass, Weight};
    use hierblue::schema::PassKind;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, d) = loop {
        let t = (rng.random_range(1..=3usize), rng.random_range(1..=3usize), rng.random_range(1..=2usize));
        if t.0 * t.1 * t.2 <= max_binaries {
            break t;
        }
    };
    let n = k * d;
    let truths: Vec<Vec<i64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0..4)).collect()).collect();
    let mut constraints = Vec::new();
    for t in &truths {
        let mut cs = ConstraintSet::empty(k, d);
        if rng.random_bool(0.5) {
            let row: Vec<f64> = (0..k).map(|_| rng.random_range(0..2) as f64).collect();
            if row.iter().any(|&v| v != 0.0) {
                let val: f64 = (0..n).map(|i| row[i / d] * t[i] as f64).sum();
                cs.push_r2(&row, val).unwrap();
            }
        }
        if rng.random_bool(0.5) {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let at: f64 = row.iter().zip(t).map(|(r, &v)| r * v as f64).sum();
            cs.push_ineq(&row, at + rng.random_range(0..2) as f64).unwrap();
        }
        cs.normalize().unwrap();
        constraints.push(cs);
    }
    let parent = (m > 1 || rng.random_bool(0.3)).then(|| {
        Vector::from_iterator(n, (0..n).map(|b| truths.iter().map(|t| t[b]).sum::<i64>() as f64))
    });
    let targets: Vec<Vector> = truths
        .iter()
        .map(|t| Vector::from_iterator(n, t.iter().map(|&v| v as f64 + rng.random_range(-1.5..1.5))))
        .collect();
    let weights = vec![Weight::Dense(Matrix::identity(n, n)); m];
    let mut case = RoundingCase {
        ids: (0..m).map(|v| format!("0/{v}")).collect(),
        constraints,
        parent,
        fractional: vec![],
        q: PassKind::Full,
        pinned: None,
    };
    let ls = LsPass {
        q: PassKind::Full,
        targets: &targets,
        weights: &weights,
        consistency: &[],
        previous: None,
    };
    case.fractional = least_squares_pass(&case.group(), &ls).unwrap().z;
    match rng.random_range(0..3) {
        0 => case.q = PassKind::Total,
        1 => {}
        _ => {
            let p = RoundPass {
                q: PassKind::Total,
                fractional: &case.fractional,
                consistency: &[],
                previous: None,
            };
            let z = rounder_pass(&case.group(), &p).unwrap().z;
            case.pinned = Some(z.iter().map(|v| Vector::from_iterator(n, v.iter().map(|&x| x as f64))).collect());
        }
    }
    case
}

/// Minimum rounding cost by enumerating every up/down choice per bucket.
pub fn enumerate_rounding(case: &RoundingCase) -> Option<f64> {
    let nb = case.binaries();
    let n = case.fractional[0].len();
    let floors: Vec<f64> = case.fractional.iter().flat_map(|v| v.iter().map(|x| (x + 1e-9).floor())).collect();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << nb) {
        let z: Vec<Vector> = (0..case.fractional.len())
            .map(|v| Vector::from_iterator(n, (0..n).map(|b| floors[v * n + b] + ((mask >> (v * n + b)) & 1) as f64)))
            .collect();
        if !rounding_feasible(case, &z) {
            continue;
        }
        let cost = rounding_cost(case.q, &case.fractional, &z);
        if best.is_none_or(|c| cost < c) {
            best = Some(cost);
        }
    }
    best
}

pub fn rounding_cost(q: hierblue::schema::PassKind, fractional: &[Vector], z: &[Vector]) -> f64 {
    use hierblue::schema::PassKind;
    fractional
        .iter()
        .zip(z)
        .map(|(f, z)| match q {
            PassKind::Total => (f.sum() - z.sum()).abs(),
            PassKind::Full => (f - z).abs().sum(),
        })
        .sum()
}

pub fn rounding_feasible(case: &RoundingCase, z: &[Vector]) -> bool {
    for (v, zv) in z.iter().enumerate() {
        if zv.iter().any(|&x| x < 0.0) {
            return false;
        }
        let r = case.constraints[v].residuals(zv).unwrap();
        if r.equality > 1e-9 || r.inequality > 1e-9 {
            return false;
        }
        if let Some(p) = &case.pinned {
            if zv.sum() != p[v].sum() {
                return false;
            }
        }
    }
    match &case.parent {
        Some(p) => z.iter().fold(Vector::zeros(p.len()), |a, v| a + v) == *p,
        None => true,
    }
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(seed: u64, max_n: usize, max_ineq: usize) -> hierblue::integer::qp::Qp {
    use hierblue::integer::qp::Qp;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * &m + Matrix::identity(n, n) * 0.1;
    let c = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = Vector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
    let me = rng.random_range(0..=2.min(n - 1));
    let mi = rng.random_range(1..=max_ineq);
    let mut qp = Qp::new(h, c);
    qp.eq = Matrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    qp.eq_rhs = &qp.eq * &x0;
    qp.ineq = Matrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let slack = Vector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
    qp.ineq_rhs = &qp.ineq * &x0 + slack;
    qp
}

/// Optimal objective by trying every set of active inequalities: the optimum
/// is the least objective among equality-constrained minimizers that are feasible.
pub fn enumerate_qp(qp: &hierblue::integer::qp::Qp) -> f64 {
    let n = qp.n();
    let mi = qp.ineq.nrows();
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << mi) {
        let active: Vec<usize> = (0..mi).filter(|&j| (mask >> j) & 1 == 1).collect();
        let rows = qp.eq.nrows() + active.len();
        if rows > n {
            continue;
        }
        let mut a = Matrix::zeros(rows, n);
        let mut b = Vector::zeros(rows);
        for i in 0..qp.eq.nrows() {
            a.set_row(i, &qp.eq.row(i));
            b[i] = qp.eq_rhs[i];
        }
        for (k, &j) in active.iter().enumerate() {
            a.set_row(qp.eq.nrows() + k, &qp.ineq.row(j));
            b[qp.eq.nrows() + k] = qp.ineq_rhs[j];
        }
        let mut kkt = Matrix::zeros(n + rows, n + rows);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        kkt.view_mut((n, 0), (rows, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, rows)).copy_from(&a.transpose());
        let svd = kkt.clone().svd(true, true);
        if svd.singular_values.min() < 1e-10 * svd.singular_values.max() {
            continue;
        }
        let mut rhs = Vector::zeros(n + rows);
        rhs.rows_mut(0, n).copy_from(&(-&qp.c));
        rhs.rows_mut(n, rows).copy_from(&b);
        let sol = svd.solve(&rhs, 1e-14).unwrap();
        let x = sol.rows(0, n).into_owned();
        if (&qp.ineq * &x - &qp.ineq_rhs).max() > 1e-9 {
            continue;
        }
        best = best.min(qp.objective(&x));
    }
    best
}
