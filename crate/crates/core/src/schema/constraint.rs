use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Per-node constraints over the bucket vector.
///
/// Equalities come in the two structured forms `(R1 ⊗ I) x = r1` and
/// `(R2 ⊗ 1ᵀ) x = r2`; inequalities `G x ≤ g` are kept dense.
/// `r1` is laid out like `(R1 ⊗ I) x`, row `i` and symmetric value `s` at `i * d + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub k: usize,
    pub d: usize,
    pub r1: Matrix,
    pub r1_vals: Vector,
    pub r2: Matrix,
    pub r2_vals: Vector,
    pub g: Matrix,
    pub g_vals: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub equality: f64,
    pub inequality: f64,
}

impl ConstraintSet {
    pub fn empty(k: usize, d: usize) -> Self {
        ConstraintSet {
            k,
            d,
            r1: Matrix::zeros(0, k),
            r1_vals: Vector::zeros(0),
            r2: Matrix::zeros(0, k),
            r2_vals: Vector::zeros(0),
            g: Matrix::zeros(0, k * d),
            g_vals: Vector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.k * self.d
    }

    pub fn has_equalities(&self) -> bool {
        self.r1.nrows() + self.r2.nrows() > 0
    }

    pub fn equality_rows(&self) -> usize {
        self.r1.nrows() * self.d + self.r2.nrows()
    }

    /// `R̃ = [R1; R2]`.
    pub fn r_tilde(&self) -> Matrix {
        linalg::vstack(&self.r1, &self.r2).expect("same width")
    }

    pub fn req(&self) -> Matrix {
        let d = self.d;
        let top = linalg::kron(&self.r1, &Matrix::identity(d, d));
        let bottom = linalg::kron(&self.r2, &Matrix::from_element(1, d, 1.0));
        let mut out = linalg::vstack(&top, &bottom).expect("same width");
        if out.nrows() == 0 {
            out = Matrix::zeros(0, self.n());
        }
        out
    }

    pub fn rval(&self) -> Vector {
        linalg::vcat(&self.r1_vals, &self.r2_vals)
    }

    pub fn push_r1(&mut self, row: &[f64], vals: &[f64]) -> Result<()> {
        if row.len() != self.k || vals.len() != self.d {
            return Err(crate::error::sizing("R1 row shape"));
        }
        let row = Matrix::from_row_slice(1, self.k, row);
        self.r1 = linalg::vstack(&self.r1, &row)?;
        self.r1_vals = linalg::vcat(&self.r1_vals, &Vector::from_column_slice(vals));
        Ok(())
    }

    pub fn push_r2(&mut self, row: &[f64], val: f64) -> Result<()> {
        if row.len() != self.k {
            return Err(crate::error::sizing("R2 row shape"));
        }
        let row = Matrix::from_row_slice(1, self.k, row);
        self.r2 = linalg::vstack(&self.r2, &row)?;
        self.r2_vals = linalg::vcat(&self.r2_vals, &Vector::from_element(1, val));
        Ok(())
    }

    pub fn push_ineq(&mut self, row: &[f64], val: f64) -> Result<()> {
        if row.len() != self.n() {
            return Err(crate::error::sizing("inequality row shape"));
        }
        let row = Matrix::from_row_slice(1, self.n(), row);
        self.g = linalg::vstack(&self.g, &row)?;
        self.g_vals = linalg::vcat(&self.g_vals, &Vector::from_element(1, val));
        Ok(())
    }

    /// Drop equality rows implied by earlier ones so that `R1` and `R̃` have
    /// full row rank, checking that every dropped right-hand side agrees.
    pub fn normalize(&mut self) -> Result<()> {
        let d = self.d;
        let keep1 = linalg::independent_rows(&self.r1, 1e-9);
        let kept_r1 = linalg::select_rows(&self.r1, &keep1);
        let kept_v1 = Vector::from_iterator(
            keep1.len() * d,
            keep1.iter().flat_map(|&i| (0..d).map(move |s| (i, s))).map(|(i, s)| self.r1_vals[i * d + s]),
        );
        for i in 0..self.r1.nrows() {
            if keep1.contains(&i) {
                continue;
            }
            let c = combination(&kept_r1, &self.r1.row(i).transpose());
            for s in 0..d {
                let expect: f64 = (0..keep1.len()).map(|j| c[j] * kept_v1[j * d + s]).sum();
                check_rhs(expect, self.r1_vals[i * d + s], "R1")?;
            }
        }

        let tilde = linalg::vstack(&kept_r1, &self.r2)?;
        let sums1: Vec<f64> = (0..keep1.len())
            .map(|j| (0..d).map(|s| kept_v1[j * d + s]).sum())
            .collect();
        let tilde_vals: Vec<f64> = sums1.iter().copied().chain(self.r2_vals.iter().copied()).collect();
        let keep_t = linalg::independent_rows(&tilde, 1e-9);
        let basis = linalg::select_rows(&tilde, &keep_t);
        let mut keep2 = Vec::new();
        for j in 0..self.r2.nrows() {
            let t = keep1.len() + j;
            if keep_t.contains(&t) {
                keep2.push(j);
                continue;
            }
            let c = combination(&basis, &tilde.row(t).transpose());
            let expect: f64 = keep_t.iter().enumerate().map(|(m, &i)| c[m] * tilde_vals[i]).sum();
            check_rhs(expect, self.r2_vals[j], "R2")?;
        }
        if keep_t.len() < keep1.len() {
            return Err(Error::Constraint("R1 rows dependent after selection".into()));
        }
        self.r1 = kept_r1;
        self.r1_vals = kept_v1;
        self.r2 = linalg::select_rows(&self.r2, &keep2);
        self.r2_vals = linalg::select_entries(&self.r2_vals, &keep2);
        Ok(())
    }

    pub fn residuals(&self, x: &Vector) -> Result<Residuals> {
        if x.len() != self.n() {
            return Err(crate::error::sizing("constraint check on wrong-length vector"));
        }
        let eq = if self.has_equalities() {
            (self.req() * x - self.rval()).amax()
        } else {
            0.0
        };
        let ineq = if self.g.nrows() > 0 {
            (&self.g * x - &self.g_vals).max().max(0.0)
        } else {
            0.0
        };
        Ok(Residuals {
            equality: eq,
            inequality: ineq,
        })
    }

    /// Exact check for integer vectors (all constraint data here is integral).
    pub fn holds_exactly(&self, x: &[i64]) -> bool {
        let xv = Vector::from_iterator(x.len(), x.iter().map(|&v| v as f64));
        match self.residuals(&xv) {
            Ok(r) => r.equality == 0.0 && r.inequality == 0.0,
            Err(_) => false,
        }
    }
}

fn combination(basis: &Matrix, target: &Vector) -> Vector {
    // Coefficients c with basisᵀ c = target.
    linalg::pinv(&basis.transpose()) * target
}

fn check_rhs(expect: f64, got: f64, what: &str) -> Result<()> {
    if (expect - got).abs() > 1e-8 * (1.0 + expect.abs().max(got.abs())) {
        return Err(Error::Inconsistent(format!(
            "redundant {what} row has right-hand side {got}, implied {expect}"
        )));
    }
    Ok(())
}

/// Parse a dense equality system into the structured `R1 ⊗ I` / `R2 ⊗ 1ᵀ` forms.
///
/// Rows must appear in canonical order: an `R1` row is a run of `d` consecutive
/// rows `v ⊗ e_s` for `s = 0..d`. With `d = 1` every row is read as `R2`.
pub fn split_constraints(req: &Matrix, rval: &Vector, k: usize, d: usize) -> Result<ConstraintSet> {
    let n = k * d;
    if req.nrows() > 0 && req.ncols() != n || req.nrows() != rval.len() {
        return Err(crate::error::sizing(format!(
            "split_constraints: {}x{} system with {} values over {n} buckets",
            req.nrows(),
            req.ncols(),
            rval.len()
        )));
    }
    let mut cs = ConstraintSet::empty(k, d);
    let mut t = 0;
    while t < req.nrows() {
        if d > 1 && t + d <= req.nrows() {
            if let Some(v) = r1_group(req, t, k, d) {
                let vals: Vec<f64> = (0..d).map(|s| rval[t + s]).collect();
                cs.push_r1(&v, &vals)?;
                t += d;
                continue;
            }
        }
        match r2_row(req, t, k, d) {
            Some(v) => {
                cs.push_r2(&v, rval[t])?;
                t += 1;
            }
            None => {
                return Err(Error::Schema(format!(
                    "constraint row {t} is neither R1⊗I nor R2⊗1ᵀ structured"
                )))
            }
        }
    }
    Ok(cs)
}

fn r1_group(req: &Matrix, t: usize, k: usize, d: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = (0..k).map(|a| req[(t, a * d)]).collect();
    if v.iter().all(|&x| x == 0.0) {
        return None;
    }
    for s in 0..d {
        for a in 0..k {
            for s2 in 0..d {
                let expect = if s2 == s { v[a] } else { 0.0 };
                if req[(t + s, a * d + s2)] != expect {
                    return None;
                }
            }
        }
    }
    Some(v)
}

fn r2_row(req: &Matrix, t: usize, k: usize, d: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = (0..k).map(|a| req[(t, a * d)]).collect();
    if v.iter().all(|&x| x == 0.0) {
        return None;
    }
    for a in 0..k {
        for s in 0..d {
            if req[(t, a * d + s)] != v[a] {
                return None;
            }
        }
    }
    Some(v)
}

/// Serialized form used in tree files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r1: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r1_vals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r2_vals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g_vals: Vec<f64>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("constraint row width differs from {cols}")));
    }
    Ok(Matrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

impl ConstraintSet {
    pub fn to_record(&self) -> ConstraintRecord {
        ConstraintRecord {
            r1: rows_of(&self.r1),
            r1_vals: self.r1_vals.iter().copied().collect(),
            r2: rows_of(&self.r2),
            r2_vals: self.r2_vals.iter().copied().collect(),
            g: rows_of(&self.g),
            g_vals: self.g_vals.iter().copied().collect(),
        }
    }

    pub fn from_record(rec: &ConstraintRecord, k: usize, d: usize) -> Result<Self> {
        let cs = ConstraintSet {
            k,
            d,
            r1: matrix_of(&rec.r1, k)?,
            r1_vals: Vector::from_column_slice(&rec.r1_vals),
            r2: matrix_of(&rec.r2, k)?,
            r2_vals: Vector::from_column_slice(&rec.r2_vals),
            g: matrix_of(&rec.g, k * d)?,
            g_vals: Vector::from_column_slice(&rec.g_vals),
        };
        if cs.r1_vals.len() != cs.r1.nrows() * d
            || cs.r2_vals.len() != cs.r2.nrows()
            || cs.g_vals.len() != cs.g.nrows()
        {
            return Err(Error::Parse("constraint right-hand side lengths".into()));
        }
        Ok(cs)
    }
}
