//! Dense convex QP: minimize `½ xᵀHx + cᵀx` subject to `Ex = e`, `Gx ≤ h`.
//!
//! Dual active-set method (Goldfarb–Idnani): start at the equality-constrained
//! minimizer and add violated inequalities one at a time, dropping active ones
//! whose multipliers would turn negative. Each step solves the KKT system of
//! the current active set directly, which is fine at the sizes seen here.

use nalgebra::LU;

use crate::error::{sizing, Error, Result};
use crate::linalg::{independent_rows, Matrix, Vector};

#[derive(Debug, Clone)]
pub struct Qp {
    pub h: Matrix,
    pub c: Vector,
    pub eq: Matrix,
    pub eq_rhs: Vector,
    pub ineq: Matrix,
    pub ineq_rhs: Vector,
    /// Optional names for equality then inequality rows, used in diagnostics.
    pub labels: Option<(Vec<String>, Vec<String>)>,
}

/// Primal solution and multipliers with `Hx + c + Eᵀλ + Gᵀμ = 0`, `μ ≥ 0`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub eq_multipliers: Vector,
    pub ineq_multipliers: Vector,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    pub inequality: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.dual)
            .max(self.complementarity)
    }
}

impl Qp {
    pub fn new(h: Matrix, c: Vector) -> Self {
        let n = c.len();
        Qp {
            h,
            c,
            eq: Matrix::zeros(0, n),
            eq_rhs: Vector::zeros(0),
            ineq: Matrix::zeros(0, n),
            ineq_rhs: Vector::zeros(0),
            labels: None,
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    fn eq_label(&self, i: usize) -> String {
        match &self.labels {
            Some((e, _)) if i < e.len() => e[i].clone(),
            _ => format!("equality row {i}"),
        }
    }

    fn ineq_label(&self, i: usize) -> String {
        match &self.labels {
            Some((_, g)) if i < g.len() => g[i].clone(),
            _ => format!("inequality row {i}"),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        if self.h.shape() != (n, n)
            || self.eq.ncols() != n
            || self.ineq.ncols() != n
            || self.eq.nrows() != self.eq_rhs.len()
            || self.ineq.nrows() != self.ineq_rhs.len()
        {
            return Err(sizing("inconsistent QP dimensions"));
        }
        Ok(())
    }

    /// KKT residuals of a candidate, each scaled by the size of its terms.
    pub fn kkt(&self, s: &QpSolution) -> KktResiduals {
        let x = &s.x;
        let grad = &self.h * x + &self.c;
        let lagr = &grad + self.eq.transpose() * &s.eq_multipliers + self.ineq.transpose() * &s.ineq_multipliers;
        let scale = 1.0 + grad.amax();
        let eq = if self.eq.nrows() > 0 {
            (&self.eq * x - &self.eq_rhs).amax() / (1.0 + self.eq_rhs.amax())
        } else {
            0.0
        };
        let (mut ineq, mut comp) = (0.0f64, 0.0f64);
        for i in 0..self.ineq.nrows() {
            let slack = self.ineq_rhs[i] - self.ineq.row(i).dot(&x.transpose());
            let sc = 1.0 + self.ineq_rhs[i].abs();
            ineq = ineq.max(-slack / sc);
            comp = comp.max((s.ineq_multipliers[i] * slack).abs() / (sc * scale));
        }
        let dual = s.ineq_multipliers.iter().fold(0.0f64, |m, &u| m.max(-u)) / scale;
        KktResiduals {
            stationarity: lagr.amax() / scale,
            equality: eq,
            inequality: ineq,
            dual,
            complementarity: comp,
        }
    }
}

const FEAS_TOL: f64 = 1e-9;

/// Solve `[H Aᵀ; A 0] [x; y] = [r1; r2]`.
fn kkt_solve(h: &Matrix, a: &Matrix, r1: &Vector, r2: &Vector) -> Result<(Vector, Vector)> {
    let n = h.nrows();
    let m = a.nrows();
    let mut k = Matrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((n, 0), (m, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    let mut rhs = Vector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r1);
    rhs.rows_mut(n, m).copy_from(r2);
    let sol = LU::new(k)
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("QP KKT system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("QP KKT system".into()));
    }
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

fn stack(qp: &Qp, eq_rows: &[usize], active: &[usize]) -> (Matrix, Vector) {
    let n = qp.n();
    let m = eq_rows.len() + active.len();
    let mut a = Matrix::zeros(m, n);
    let mut b = Vector::zeros(m);
    for (k, &i) in eq_rows.iter().enumerate() {
        a.set_row(k, &qp.eq.row(i));
        b[k] = qp.eq_rhs[i];
    }
    for (k, &j) in active.iter().enumerate() {
        a.set_row(eq_rows.len() + k, &qp.ineq.row(j));
        b[eq_rows.len() + k] = qp.ineq_rhs[j];
    }
    (a, b)
}

/// Solve the QP. `H` must be positive definite.
pub fn solve_qp(qp: &Qp) -> Result<QpSolution> {
    qp.check()?;
    let n = qp.n();
    let mi = qp.ineq.nrows();
    let eq_rows = independent_rows(&qp.eq, 1e-10);

    let (a0, b0) = stack(qp, &eq_rows, &[]);
    let (mut x, _) = kkt_solve(&qp.h, &a0, &(-&qp.c), &b0)?;
    for i in 0..qp.eq.nrows() {
        let r = qp.eq.row(i).dot(&x.transpose()) - qp.eq_rhs[i];
        if r.abs() > 1e-7 * (1.0 + qp.eq_rhs[i].abs() + qp.eq.row(i).amax() * x.amax()) {
            return Err(Error::Infeasible(format!(
                "{} is inconsistent with the other equalities (residual {r:e})",
                qp.eq_label(i)
            )));
        }
    }
    let mut active: Vec<usize> = Vec::new();
    let mut u_act: Vec<f64> = Vec::new();
    let hmax = qp.h.diagonal().amax().max(f64::MIN_POSITIVE);
    let row_norms: Vec<f64> = (0..mi).map(|j| qp.ineq.row(j).norm()).collect();
    for j in 0..mi {
        if row_norms[j] == 0.0 && qp.ineq_rhs[j] < -FEAS_TOL {
            return Err(Error::Infeasible(format!("{} reads 0 ≤ {}", qp.ineq_label(j), qp.ineq_rhs[j])));
        }
    }
    let max_iter = 50 * (n + mi) + 100;
    let mut iterations = 0;

    loop {
        // Most violated inequality, normalized by row length.
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..mi {
            if active.contains(&j) || row_norms[j] == 0.0 {
                continue;
            }
            let viol = (qp.ineq.row(j).dot(&x.transpose()) - qp.ineq_rhs[j]) / row_norms[j];
            if viol > FEAS_TOL * (1.0 + qp.ineq_rhs[j].abs() / row_norms[j]) && pick.is_none_or(|(_, v)| viol > v) {
                pick = Some((j, viol));
            }
        }
        let Some((p, _)) = pick else { break };
        let gp: Vector = qp.ineq.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Infeasible(format!("QP active set did not settle after {max_iter} steps")));
            }
            let (a, _) = stack(qp, &eq_rows, &active);
            let (dx, dmu) = kkt_solve(&qp.h, &a, &(-&gp), &Vector::zeros(a.nrows()))?;
            let me = eq_rows.len();
            // Largest dual step keeping active inequality multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &u) in u_act.iter().enumerate() {
                let du = dmu[me + k];
                if du < 0.0 {
                    let t = u / -du;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let curv = -gp.dot(&dx);
            let dependent = curv <= 1e-11 * row_norms[p] * row_norms[p] / hmax;
            if dependent {
                let Some(k) = drop else {
                    let mut names: Vec<String> = eq_rows.iter().map(|&i| qp.eq_label(i)).collect();
                    names.extend(active.iter().map(|&j| qp.ineq_label(j)));
                    return Err(Error::Infeasible(format!(
                        "{} conflicts with [{}]",
                        qp.ineq_label(p),
                        names.join(", ")
                    )));
                };
                for (k2, u) in u_act.iter_mut().enumerate() {
                    *u += t1 * dmu[me + k2];
                }
                u_p += t1;
                active.remove(k);
                u_act.remove(k);
                continue;
            }
            let viol = gp.dot(&x) - qp.ineq_rhs[p];
            let t2 = viol / curv;
            let t = t1.min(t2);
            x.axpy(t, &dx, 1.0);
            for (k2, u) in u_act.iter_mut().enumerate() {
                *u += t * dmu[me + k2];
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u_act.push(u_p);
                break;
            }
            let k = drop.expect("finite partial step has a blocking multiplier");
            active.remove(k);
            u_act.remove(k);
        }
    }

    // Polish: re-solve on the final active set for accurate x and multipliers.
    let (a, b) = stack(qp, &eq_rows, &active);
    let (xp, mult) = kkt_solve(&qp.h, &a, &(-&qp.c), &b)?;
    let mut eq_multipliers = Vector::zeros(qp.eq.nrows());
    for (k, &i) in eq_rows.iter().enumerate() {
        eq_multipliers[i] = mult[k];
    }
    let mut ineq_multipliers = Vector::zeros(mi);
    for (k, &j) in active.iter().enumerate() {
        ineq_multipliers[j] = mult[eq_rows.len() + k].max(0.0);
    }
    Ok(QpSolution {
        x: xp,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}
