//! One projection pass over a sibling group: constrained least squares or rounding.

use super::lp::{solve_lp, Lp, LpResult};
use super::qp::{solve_qp, Qp, QpSolution};
use super::weight::{project, projection, Weight};
use crate::error::{sizing, Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::schema::{ConstraintSet, PassKind};

/// Children solved jointly, with the finalized parent when there is one.
#[derive(Debug, Clone)]
pub struct Group<'a> {
    pub ids: Vec<&'a str>,
    pub constraints: Vec<&'a ConstraintSet>,
    pub parent: Option<&'a Vector>,
}

impl Group<'_> {
    fn n(&self) -> usize {
        self.constraints.first().map_or(0, |c| c.n())
    }

    fn check(&self, vectors: usize) -> Result<()> {
        if self.ids.is_empty() || self.ids.len() != self.constraints.len() || vectors != self.ids.len() {
            return Err(sizing("sibling group with mismatched children"));
        }
        let n = self.n();
        if self.constraints.iter().any(|c| c.n() != n) || self.parent.is_some_and(|p| p.len() != n) {
            return Err(sizing("sibling group with mixed bucket spaces"));
        }
        Ok(())
    }
}

/// Relative weight of the proximal term that makes the total pass strictly convex.
pub const TOTAL_PROXIMAL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LsPass<'a> {
    pub q: PassKind,
    pub targets: &'a [Vector],
    pub weights: &'a [Weight],
    /// Projections pinned by earlier passes, and the estimates they are pinned to.
    pub consistency: &'a [PassKind],
    pub previous: Option<&'a [Vector]>,
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub z: Vec<Vector>,
    /// `Σ_v (Q(z_v − ẑ_v))ᵀ P_v Q(z_v − ẑ_v)`.
    pub objective: f64,
    pub qp: Qp,
    pub solution: QpSolution,
}

fn place(row: &[f64], block: usize, n: usize, total: usize) -> Vec<f64> {
    let mut out = vec![0.0; total];
    out[block * n..(block + 1) * n].copy_from_slice(row);
    out
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Matrix {
    Matrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied())
}

/// Shared constraint rows of a pass over the stacked variables.
struct System {
    eq: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    eq_labels: Vec<String>,
    le: Vec<Vec<f64>>,
    le_rhs: Vec<f64>,
    le_labels: Vec<String>,
}

fn system(g: &Group, consistency: &[PassKind], previous: Option<&[Vector]>) -> Result<System> {
    let n = g.n();
    let total = n * g.ids.len();
    let mut s = System {
        eq: vec![],
        eq_rhs: vec![],
        eq_labels: vec![],
        le: vec![],
        le_rhs: vec![],
        le_labels: vec![],
    };
    for (v, (id, cs)) in g.ids.iter().zip(&g.constraints).enumerate() {
        let req = cs.req();
        let rval = cs.rval();
        for r in 0..req.nrows() {
            let row: Vec<f64> = req.row(r).iter().copied().collect();
            s.eq.push(place(&row, v, n, total));
            s.eq_rhs.push(rval[r]);
            s.eq_labels.push(format!("{id}: equality {r}"));
        }
        for r in 0..cs.g.nrows() {
            let row: Vec<f64> = cs.g.row(r).iter().copied().collect();
            s.le.push(place(&row, v, n, total));
            s.le_rhs.push(cs.g_vals[r]);
            s.le_labels.push(format!("{id}: inequality {r}"));
        }
    }
    if let Some(p) = g.parent {
        for b in 0..n {
            let mut row = vec![0.0; total];
            for v in 0..g.ids.len() {
                row[v * n + b] = 1.0;
            }
            s.eq.push(row);
            s.eq_rhs.push(p[b]);
            s.eq_labels.push(format!("parent sum, bucket {b}"));
        }
    }
    if !consistency.is_empty() {
        let prev = previous.ok_or_else(|| sizing("consistency operator without pinned estimates"))?;
        for &kind in consistency {
            let qm = projection(kind, n);
            for (v, id) in g.ids.iter().enumerate() {
                let pinned = project(kind, &prev[v]);
                for r in 0..qm.nrows() {
                    let row: Vec<f64> = qm.row(r).iter().copied().collect();
                    s.eq.push(place(&row, v, n, total));
                    s.eq_rhs.push(pinned[r]);
                    s.eq_labels.push(format!("{id}: pinned {kind:?} row {r}"));
                }
            }
        }
    }
    Ok(s)
}

/// Weighted least squares over the group under every constraint.
pub fn least_squares_pass(g: &Group, p: &LsPass) -> Result<LsSolution> {
    g.check(p.targets.len())?;
    if p.weights.len() != p.targets.len() {
        return Err(sizing("one weight per child required"));
    }
    let n = g.n();
    let m = g.ids.len();
    let total = n * m;
    let mut h = Matrix::zeros(total, total);
    let mut c = Vector::zeros(total);
    for v in 0..m {
        let mut hv = p.weights[v].hessian(n);
        if let (PassKind::Total, Weight::Scalar(w)) = (p.q, &p.weights[v]) {
            for i in 0..n {
                hv[(i, i)] += TOTAL_PROXIMAL * w;
            }
        }
        let cv = -(&hv * &p.targets[v]);
        h.view_mut((v * n, v * n), (n, n)).copy_from(&hv);
        c.rows_mut(v * n, n).copy_from(&cv);
    }
    let s = system(g, p.consistency, p.previous)?;
    let mut le = s.le;
    let mut le_rhs = s.le_rhs;
    let mut le_labels = s.le_labels;
    for (v, id) in g.ids.iter().enumerate() {
        for b in 0..n {
            let mut row = vec![0.0; total];
            row[v * n + b] = -1.0;
            le.push(row);
            le_rhs.push(0.0);
            le_labels.push(format!("{id}: bucket {b} ≥ 0"));
        }
    }
    let qp = Qp {
        h,
        c,
        eq: rows_to_matrix(&s.eq, total),
        eq_rhs: Vector::from_vec(s.eq_rhs),
        ineq: rows_to_matrix(&le, total),
        ineq_rhs: Vector::from_vec(le_rhs),
        labels: Some((s.eq_labels, le_labels)),
    };
    let solution = solve_qp(&qp)?;
    let z: Vec<Vector> = (0..m).map(|v| solution.x.rows(v * n, n).into_owned()).collect();
    let mut objective = 0.0;
    for v in 0..m {
        let w = project(p.q, &(&z[v] - &p.targets[v]));
        objective += w.dot(&p.weights[v].apply(&w)?);
    }
    Ok(LsSolution {
        z,
        objective,
        qp,
        solution,
    })
}

/// The objective in auxiliary variables: `w_v = Q(z_v − ẑ_v)`, `y_v = P_v w_v`,
/// leaving one product term `w_vᵀ y_v` per projected row.
#[derive(Debug, Clone)]
pub struct AuxiliaryForm {
    pub w: Vec<Vector>,
    pub y: Vec<Vector>,
    pub objective: f64,
    pub terms: usize,
}

pub fn auxiliary_form(q: PassKind, targets: &[Vector], weights: &[Weight], z: &[Vector]) -> Result<AuxiliaryForm> {
    let mut out = AuxiliaryForm {
        w: vec![],
        y: vec![],
        objective: 0.0,
        terms: 0,
    };
    for ((t, wt), zv) in targets.iter().zip(weights).zip(z) {
        let w = project(q, &(zv - t));
        let y = wt.apply(&w)?;
        out.objective += w.dot(&y);
        out.terms += w.len();
        out.w.push(w);
        out.y.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RoundPass<'a> {
    pub q: PassKind,
    pub fractional: &'a [Vector],
    pub consistency: &'a [PassKind],
    pub previous: Option<&'a [Vector]>,
}

/// Binaries at or above this count go to branch and bound.
pub const EXHAUSTIVE_BELOW: usize = 20;

/// `min Σ 1ᵀ|Q(ẑ − ⌊ẑ⌋ − y)|` over `y ∈ {0,1}` under the group's constraints,
/// written over `y` with the floors substituted into the right-hand sides.
#[derive(Debug, Clone)]
pub struct RoundingProblem {
    pub q: PassKind,
    pub children: usize,
    pub n: usize,
    pub base: Vec<i64>,
    pub frac: Vec<f64>,
    pub eq: Matrix,
    pub eq_rhs: Vector,
    pub le: Matrix,
    pub le_rhs: Vector,
    /// Binaries forced to 1 to keep `⌊ẑ⌋ + y ≥ 0`.
    pub forced: Vec<bool>,
}

/// Branch-and-bound subproblem: binary bounds and, for the total pass,
/// bounds on each child's sum of binaries.
#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    sum_lo: Vec<f64>,
    sum_hi: Vec<f64>,
}

/// Explore the side nearer the relaxation first.
fn push_nearer(stack: &mut Vec<Node>, down: Node, up: Node, x: f64) {
    if x - x.floor() >= 0.5 {
        stack.push(down);
        stack.push(up);
    } else {
        stack.push(up);
        stack.push(down);
    }
}

const SNAP: f64 = 1e-9;
const ROW_TOL: f64 = 1e-9;

fn tie_tol(c: f64) -> f64 {
    1e-9 * (1.0 + c.abs())
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP * (1.0 + v.abs()) {
        r
    } else {
        v
    }
}

impl RoundingProblem {
    pub fn build(g: &Group, p: &RoundPass) -> Result<Self> {
        g.check(p.fractional.len())?;
        let n = g.n();
        let m = g.ids.len();
        let total = n * m;
        if let Some(par) = g.parent {
            if par.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::Infeasible("rounding under a non-integral parent".into()));
            }
        }
        if let Some(prev) = p.previous {
            if prev.iter().flatten().any(|v| v.fract() != 0.0) {
                return Err(Error::Infeasible("rounding pinned to non-integral estimates".into()));
            }
        }
        let mut base = Vec::with_capacity(total);
        let mut frac = Vec::with_capacity(total);
        let mut forced = Vec::with_capacity(total);
        for (v, z) in p.fractional.iter().enumerate() {
            for (b, &x) in z.iter().enumerate() {
                let s = snap(x);
                let f = s.floor();
                if f < -1.0 {
                    return Err(Error::Infeasible(format!(
                        "{} bucket {b} is {x}, below any nonnegative rounding",
                        g.ids[v]
                    )));
                }
                base.push(f as i64);
                frac.push(s - f);
                forced.push(f < 0.0);
            }
        }
        let s = system(g, p.consistency, p.previous)?;
        let basev = Vector::from_iterator(total, base.iter().map(|&b| b as f64));
        let eq = rows_to_matrix(&s.eq, total);
        let le = rows_to_matrix(&s.le, total);
        let eq_rhs = Vector::from_vec(s.eq_rhs) - &eq * &basev;
        let le_rhs = Vector::from_vec(s.le_rhs) - &le * &basev;
        Ok(RoundingProblem {
            q: p.q,
            children: m,
            n,
            base,
            frac,
            eq,
            eq_rhs,
            le,
            le_rhs,
            forced,
        })
    }

    pub fn binaries(&self) -> usize {
        self.base.len()
    }

    pub fn cost(&self, y: &[u8]) -> f64 {
        match self.q {
            PassKind::Full => self.frac.iter().zip(y).map(|(&f, &b)| (f - b as f64).abs()).sum(),
            PassKind::Total => (0..self.children)
                .map(|v| {
                    let r = v * self.n..(v + 1) * self.n;
                    let f: f64 = self.frac[r.clone()].iter().sum();
                    let t: f64 = y[r].iter().map(|&b| b as f64).sum();
                    (f - t).abs()
                })
                .sum(),
        }
    }

    pub fn feasible(&self, y: &[u8]) -> bool {
        if y.iter().zip(&self.forced).any(|(&b, &f)| f && b == 0) {
            return false;
        }
        let dot = |row: nalgebra::MatrixView1xX<f64, nalgebra::U1, nalgebra::Dyn>| -> f64 {
            row.iter().zip(y).filter(|(_, &b)| b == 1).map(|(a, _)| a).sum()
        };
        (0..self.eq.nrows()).all(|i| (dot(self.eq.row(i)) - self.eq_rhs[i]).abs() <= ROW_TOL * (1.0 + self.eq_rhs[i].abs()))
            && (0..self.le.nrows()).all(|i| dot(self.le.row(i)) <= self.le_rhs[i] + ROW_TOL * (1.0 + self.le_rhs[i].abs()))
    }

    /// Integral estimates `⌊ẑ⌋ + y` per child.
    pub fn assemble(&self, y: &[u8]) -> Vec<Vec<i64>> {
        (0..self.children)
            .map(|v| (0..self.n).map(|b| self.base[v * self.n + b] + y[v * self.n + b] as i64).collect())
            .collect()
    }

    /// Every assignment in order, from all ones down to all zeros with the
    /// first child's first bucket most significant. Keeping the first strict
    /// improvement yields the earliest-positions-first tie rule.
    pub fn solve_exhaustive(&self) -> Option<(Vec<u8>, f64)> {
        let nb = self.binaries();
        assert!(nb < 63, "exhaustive rounding over {nb} binaries");
        let mut best: Option<(Vec<u8>, f64)> = None;
        let mut y = vec![0u8; nb];
        for mask in (0..(1u64 << nb)).rev() {
            for (i, b) in y.iter_mut().enumerate() {
                *b = ((mask >> (nb - 1 - i)) & 1) as u8;
            }
            let c = self.cost(&y);
            if best.as_ref().is_some_and(|(_, bc)| c > bc - tie_tol(*bc)) {
                continue;
            }
            if self.feasible(&y) {
                best = Some((y.clone(), c));
            }
        }
        best
    }

    fn lp(&self, node: &Node) -> Lp {
        let (lo, hi) = (&node.lo, &node.hi);
        let nb = self.binaries();
        let aux = if self.q == PassKind::Total { self.children } else { 0 };
        let nv = nb + aux;
        let mut c = Vector::zeros(nv);
        let sums = node.sum_lo.len();
        let mut le = Matrix::zeros(self.le.nrows() + 2 * aux + 2 * sums, nv);
        let mut le_rhs = Vector::zeros(le.nrows());
        le.view_mut((0, 0), (self.le.nrows(), nb)).copy_from(&self.le);
        le_rhs.rows_mut(0, self.le.nrows()).copy_from(&self.le_rhs);
        match self.q {
            PassKind::Full => {
                for i in 0..nb {
                    c[i] = 1.0 - 2.0 * self.frac[i];
                }
            }
            PassKind::Total => {
                // t_v ≥ |F_v − Y_v| as two rows per child.
                for v in 0..self.children {
                    c[nb + v] = 1.0;
                    let f: f64 = self.frac[v * self.n..(v + 1) * self.n].iter().sum();
                    let (r1, r2) = (self.le.nrows() + 2 * v, self.le.nrows() + 2 * v + 1);
                    for b in 0..self.n {
                        le[(r1, v * self.n + b)] = -1.0;
                        le[(r2, v * self.n + b)] = 1.0;
                    }
                    le[(r1, nb + v)] = -1.0;
                    le[(r2, nb + v)] = -1.0;
                    le_rhs[r1] = -f;
                    le_rhs[r2] = f;
                }
            }
        }
        // Child-sum bounds from branching.
        for v in 0..sums {
            let r = self.le.nrows() + 2 * aux + 2 * v;
            for b in 0..self.n {
                le[(r, v * self.n + b)] = -1.0;
                le[(r + 1, v * self.n + b)] = 1.0;
            }
            le_rhs[r] = -node.sum_lo[v];
            le_rhs[r + 1] = node.sum_hi[v];
        }
        let mut eq = Matrix::zeros(self.eq.nrows(), nv);
        eq.view_mut((0, 0), (self.eq.nrows(), nb)).copy_from(&self.eq);
        let mut lower = lo.to_vec();
        let mut upper = hi.to_vec();
        lower.extend(std::iter::repeat_n(0.0, aux));
        upper.extend(std::iter::repeat_n(f64::INFINITY, aux));
        Lp {
            c,
            eq,
            eq_rhs: self.eq_rhs.clone(),
            le,
            le_rhs,
            lower,
            upper,
        }
    }

    fn constant(&self) -> f64 {
        match self.q {
            PassKind::Full => self.frac.iter().sum(),
            PassKind::Total => 0.0,
        }
    }

    fn root(&self, lo: Vec<f64>, hi: Vec<f64>) -> Node {
        let sums = if self.q == PassKind::Total { self.children } else { 0 };
        Node {
            lo,
            hi,
            sum_lo: vec![0.0; sums],
            sum_hi: vec![self.n as f64; sums],
        }
    }

    /// Depth-first branch and bound on LP relaxations. Returns the best
    /// assignment with cost at most `limit`, or the first such one found when
    /// `first` is set. The total pass branches on child sums before binaries,
    /// since its objective only sees the sums.
    fn branch_and_bound(&self, root: Node, limit: f64, first: bool) -> Result<Option<(Vec<u8>, f64)>> {
        let nb = self.binaries();
        let mut best: Option<(Vec<u8>, f64)> = None;
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            let cut = match &best {
                Some((_, c)) => c - tie_tol(*c),
                None => limit,
            };
            let x = match solve_lp(&self.lp(&node))? {
                LpResult::Optimal { x, objective } => {
                    if objective + self.constant() > cut + tie_tol(cut) {
                        continue;
                    }
                    x
                }
                LpResult::Infeasible => continue,
                LpResult::Unbounded => return Err(Error::Infeasible("unbounded rounding relaxation".into())),
            };
            let most_fractional = |vals: &mut dyn Iterator<Item = (usize, f64)>| {
                vals.map(|(i, v)| (i, v, (v - v.round()).abs()))
                    .filter(|&(_, _, f)| f > 1e-7)
                    .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)))
            };
            let sum = most_fractional(&mut (0..node.sum_lo.len()).map(|v| (v, x.rows(v * self.n, self.n).sum())));
            if let Some((v, t, _)) = sum {
                let mut down = node.clone();
                down.sum_hi[v] = t.floor();
                let mut up = node;
                up.sum_lo[v] = t.ceil();
                push_nearer(&mut stack, down, up, t);
                continue;
            }
            match most_fractional(&mut (0..nb).map(|i| (i, x[i]))) {
                None => {
                    let y: Vec<u8> = (0..nb).map(|i| x[i].round() as u8).collect();
                    if self.feasible(&y) {
                        let c = self.cost(&y);
                        if c <= cut + tie_tol(cut) && best.as_ref().is_none_or(|(_, bc)| c < bc - tie_tol(*bc)) {
                            best = Some((y, c));
                            if first {
                                return Ok(best);
                            }
                        }
                    }
                }
                Some((j, t, _)) => {
                    let mut down = node.clone();
                    down.hi[j] = 0.0;
                    let mut up = node;
                    up.lo[j] = 1.0;
                    push_nearer(&mut stack, down, up, t);
                }
            }
        }
        Ok(best)
    }

    /// Optimal cost by branch and bound, then earliest positions first among
    /// equal-cost assignments by fixing binaries to 1 in order where possible.
    pub fn solve_branch_and_bound(&self) -> Result<Option<(Vec<u8>, f64)>> {
        let nb = self.binaries();
        let mut lo: Vec<f64> = self.forced.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let mut hi = vec![1.0; nb];
        let Some((mut y, c)) = self.branch_and_bound(self.root(lo.clone(), hi.clone()), f64::INFINITY, false)? else {
            return Ok(None);
        };
        let limit = c + tie_tol(c);
        for i in 0..nb {
            if y[i] == 1 {
                lo[i] = 1.0;
                continue;
            }
            let mut trial = lo.clone();
            trial[i] = 1.0;
            match self.branch_and_bound(self.root(trial, hi.clone()), limit, true)? {
                Some((y2, _)) => {
                    y = y2;
                    lo[i] = 1.0;
                }
                None => hi[i] = 0.0,
            }
        }
        let c = self.cost(&y);
        Ok(Some((y, c)))
    }

    pub fn solve(&self) -> Result<Option<(Vec<u8>, f64)>> {
        if self.binaries() < EXHAUSTIVE_BELOW {
            Ok(self.solve_exhaustive())
        } else {
            self.solve_branch_and_bound()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundSolution {
    pub z: Vec<Vec<i64>>,
    pub cost: f64,
}

/// Round the group's fractional estimates to integers satisfying every constraint.
pub fn rounder_pass(g: &Group, p: &RoundPass) -> Result<RoundSolution> {
    let problem = RoundingProblem::build(g, p)?;
    let Some((y, cost)) = problem.solve()? else {
        return Err(Error::Infeasible(format!(
            "no rounding of [{}] satisfies the constraints",
            g.ids.join(", ")
        )));
    };
    let z = problem.assemble(&y);
    for (v, zv) in z.iter().enumerate() {
        if !g.constraints[v].holds_exactly(zv) || zv.iter().any(|&x| x < 0) {
            return Err(Error::Infeasible(format!("rounded {} violates its constraints", g.ids[v])));
        }
    }
    Ok(RoundSolution { z, cost })
}
