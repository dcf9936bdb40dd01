//! Dense two-phase simplex for small bounded LPs:
//! minimize `cᵀx` subject to `Ex = e`, `Lx ≤ l`, `lo ≤ x ≤ hi`.

use crate::error::{sizing, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct Lp {
    pub c: Vector,
    pub eq: Matrix,
    pub eq_rhs: Vector,
    pub le: Matrix,
    pub le_rhs: Vector,
    pub lower: Vec<f64>,
    /// `f64::INFINITY` for no upper bound.
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { x: Vector, objective: f64 },
    Infeasible,
    Unbounded,
}

const TOL: f64 = 1e-9;

struct Tableau {
    t: Matrix,
    basis: Vec<usize>,
    /// Columns allowed to enter.
    allowed: Vec<bool>,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let w = self.t.ncols();
        for j in 0..w {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f != 0.0 {
                for j in 0..w {
                    let v = self.t[(r, j)];
                    if v != 0.0 {
                        self.t[(i, j)] -= f * v;
                    }
                }
            }
        }
        self.basis[r] = c;
    }

    /// Run simplex iterations on the objective in the last row.
    /// Returns false when unbounded.
    fn optimize(&mut self) -> bool {
        let m = self.rows();
        let obj = m;
        let rhs = self.cols();
        let mut degenerate = 0usize;
        loop {
            // Dantzig pricing, switching to Bland's rule after a run of
            // degenerate pivots to rule out cycling.
            let bland = degenerate > 50;
            let mut enter = None;
            let mut best = -TOL;
            for j in 0..self.cols() {
                if !self.allowed[j] {
                    continue;
                }
                let rc = self.t[(obj, j)];
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, c)];
                if a > TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOL || (ratio <= lr + TOL && self.basis[i] < self.basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else { return false };
            if ratio.abs() <= TOL {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

pub fn solve_lp(lp: &Lp) -> Result<LpResult> {
    let n = lp.c.len();
    if lp.eq.ncols() != n
        || lp.le.ncols() != n
        || lp.lower.len() != n
        || lp.upper.len() != n
        || lp.eq.nrows() != lp.eq_rhs.len()
        || lp.le.nrows() != lp.le_rhs.len()
    {
        return Err(sizing("inconsistent LP dimensions"));
    }
    for j in 0..n {
        if lp.upper[j] < lp.lower[j] - TOL {
            return Ok(LpResult::Infeasible);
        }
    }
    // Shift to x' = x - lo ≥ 0 and drop fixed variables.
    let free: Vec<usize> = (0..n).filter(|&j| lp.upper[j] - lp.lower[j] > TOL).collect();
    let lo = Vector::from_vec(lp.lower.clone());
    let eq_b = &lp.eq_rhs - &lp.eq * &lo;
    let le_b = &lp.le_rhs - &lp.le * &lo;
    let ub: Vec<usize> = free.iter().copied().filter(|&j| lp.upper[j].is_finite()).collect();

    let me = lp.eq.nrows();
    let ml = lp.le.nrows() + ub.len();
    let m = me + ml;
    let nf = free.len();
    // Columns: free variables, one slack per ≤ row, one artificial per row.
    let n_art0 = nf + ml;
    let width = n_art0 + m + 1;
    let mut t = Matrix::zeros(m + 1, width);
    let mut basis = vec![0; m];
    let mut needs_art = vec![false; m];
    for i in 0..me {
        let s = if eq_b[i] < 0.0 { -1.0 } else { 1.0 };
        for (k, &j) in free.iter().enumerate() {
            t[(i, k)] = s * lp.eq[(i, j)];
        }
        t[(i, width - 1)] = s * eq_b[i];
        needs_art[i] = true;
    }
    for r in 0..ml {
        let i = me + r;
        let (s, b) = if r < lp.le.nrows() {
            let s = if le_b[r] < 0.0 { -1.0 } else { 1.0 };
            for (k, &j) in free.iter().enumerate() {
                t[(i, k)] = s * lp.le[(r, j)];
            }
            (s, s * le_b[r])
        } else {
            let j = ub[r - lp.le.nrows()];
            let k = free.iter().position(|&f| f == j).expect("bounded column is free");
            t[(i, k)] = 1.0;
            (1.0, lp.upper[j] - lp.lower[j])
        };
        t[(i, nf + r)] = s;
        t[(i, width - 1)] = b;
        if s > 0.0 {
            basis[i] = nf + r;
        } else {
            needs_art[i] = true;
        }
    }
    for i in 0..m {
        if needs_art[i] {
            t[(i, n_art0 + i)] = 1.0;
            basis[i] = n_art0 + i;
        }
    }
    let mut tab = Tableau {
        t,
        basis,
        allowed: (0..width - 1).map(|j| j < n_art0).collect(),
    };

    // Phase 1: minimize the sum of artificials.
    if needs_art.iter().any(|&a| a) {
        for i in 0..m {
            if needs_art[i] {
                for j in 0..width {
                    let v = tab.t[(i, j)];
                    tab.t[(m, j)] -= v;
                }
                tab.t[(m, n_art0 + i)] = 0.0;
            }
        }
        tab.optimize();
        let scale = 1.0 + eq_b.amax().max(le_b.amax());
        if -tab.t[(m, width - 1)] > 1e-7 * scale {
            return Ok(LpResult::Infeasible);
        }
        // Drive remaining artificials out of the basis; rows where that is
        // impossible are redundant and are dropped.
        let mut drop = Vec::new();
        for i in 0..m {
            if tab.basis[i] >= n_art0 {
                match (0..n_art0).find(|&j| tab.t[(i, j)].abs() > 1e-8) {
                    Some(j) => tab.pivot(i, j),
                    None => drop.push(i),
                }
            }
        }
        if !drop.is_empty() {
            let keep: Vec<usize> = (0..=m).filter(|i| !drop.contains(i)).collect();
            tab.t = crate::linalg::select_rows(&tab.t, &keep);
            tab.basis = keep[..keep.len() - 1].iter().map(|&i| tab.basis[i]).collect();
        }
    }

    // Phase 2 objective row: reduced costs of c over the current basis.
    let rows = tab.rows();
    let mut cost = vec![0.0; width - 1];
    for (k, &j) in free.iter().enumerate() {
        cost[k] = lp.c[j];
    }
    for j in 0..width {
        tab.t[(rows, j)] = if j < width - 1 { cost[j] } else { 0.0 };
    }
    for i in 0..rows {
        let cb = cost[tab.basis[i]];
        if cb != 0.0 {
            for j in 0..width {
                let v = tab.t[(i, j)];
                tab.t[(rows, j)] -= cb * v;
            }
        }
    }
    if !tab.optimize() {
        return Ok(LpResult::Unbounded);
    }
    let mut x = lo;
    for i in 0..rows {
        let b = tab.basis[i];
        if b < nf {
            x[free[b]] += tab.t[(i, width - 1)];
        }
    }
    for j in 0..n {
        if !free.contains(&j) {
            x[j] = lp.lower[j];
        }
    }
    let objective = lp.c.dot(&x);
    Ok(LpResult::Optimal { x, objective })
}
