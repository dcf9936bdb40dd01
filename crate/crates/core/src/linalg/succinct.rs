use super::{inverse, kron, pinv, symmetrize, unvec, vec_rows, vstack, Matrix, Vector};
use crate::error::{sizing, Error, Result};

/// Centering projector `I - J/d`.
pub fn p0(d: usize) -> Matrix {
    Matrix::identity(d, d) - Matrix::from_element(d, d, 1.0 / d as f64)
}

/// Mean projector `J/d`.
pub fn p1(d: usize) -> Matrix {
    Matrix::from_element(d, d, 1.0 / d as f64)
}

/// `a ⊗ P0 + b ⊗ P1`, stored as the two `m × k` components.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccinctMatrix {
    pub a: Matrix,
    pub b: Matrix,
    pub d: usize,
}

impl SuccinctMatrix {
    pub fn new(a: Matrix, b: Matrix, d: usize) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(sizing(format!(
                "succinct components {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if d == 0 {
            return Err(sizing("succinct matrix with d = 0"));
        }
        Ok(SuccinctMatrix { a, b, d })
    }

    pub fn identity(k: usize, d: usize) -> Self {
        SuccinctMatrix {
            a: Matrix::identity(k, k),
            b: Matrix::identity(k, k),
            d,
        }
    }

    pub fn zeros(m: usize, k: usize, d: usize) -> Self {
        SuccinctMatrix {
            a: Matrix::zeros(m, k),
            b: Matrix::zeros(m, k),
            d,
        }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows() * self.d
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols() * self.d
    }

    pub fn to_dense(&self) -> Matrix {
        kron(&self.a, &p0(self.d)) + kron(&self.b, &p1(self.d))
    }

    /// Recover the components of a dense matrix known to have succinct structure.
    ///
    /// With `d = 1` the `P0` part vanishes and `a` is set equal to `b`.
    pub fn from_dense(m: &Matrix, rows: usize, cols: usize, d: usize) -> Result<Self> {
        if m.nrows() != rows * d || m.ncols() != cols * d || d == 0 {
            return Err(sizing(format!(
                "from_dense: {}x{} is not ({}·{})x({}·{})",
                m.nrows(),
                m.ncols(),
                rows,
                d,
                cols,
                d
            )));
        }
        let mut a = Matrix::zeros(rows, cols);
        let mut b = Matrix::zeros(rows, cols);
        let df = d as f64;
        for i in 0..rows {
            for j in 0..cols {
                let block = m.view((i * d, j * d), (d, d));
                let bij = block.sum() / df;
                b[(i, j)] = bij;
                a[(i, j)] = if d == 1 {
                    bij
                } else {
                    (block.trace() - bij) / (df - 1.0)
                };
            }
        }
        Ok(SuccinctMatrix { a, b, d })
    }

    fn check_d(&self, other: &Self) -> Result<()> {
        if self.d != other.d {
            return Err(sizing(format!("succinct d {} vs {}", self.d, other.d)));
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_d(other)?;
        if self.a.ncols() != other.a.nrows() {
            return Err(sizing(format!(
                "succinct product {:?} by {:?}",
                self.a.shape(),
                other.a.shape()
            )));
        }
        Ok(SuccinctMatrix {
            a: &self.a * &other.a,
            b: &self.b * &other.b,
            d: self.d,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_d(other)?;
        if self.a.shape() != other.a.shape() {
            return Err(sizing("succinct sum of different shapes"));
        }
        Ok(SuccinctMatrix {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
            d: self.d,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        SuccinctMatrix {
            a: &self.a * s,
            b: &self.b * s,
            d: self.d,
        }
    }

    pub fn transpose(&self) -> Self {
        SuccinctMatrix {
            a: self.a.transpose(),
            b: self.b.transpose(),
            d: self.d,
        }
    }

    /// Componentwise pseudoinverse, which is the pseudoinverse of the whole matrix.
    pub fn pinv(&self) -> Self {
        SuccinctMatrix {
            a: pinv(&self.a),
            b: pinv(&self.b),
            d: self.d,
        }
    }

    pub fn inverse(&self, what: &str) -> Result<Self> {
        Ok(SuccinctMatrix {
            a: inverse(&self.a, &format!("{what} (P0 component)"))?,
            b: inverse(&self.b, &format!("{what} (P1 component)"))?,
            d: self.d,
        })
    }

    pub fn symmetrize(&self) -> Self {
        SuccinctMatrix {
            a: symmetrize(&self.a),
            b: symmetrize(&self.b),
            d: self.d,
        }
    }

    /// Matrix-vector product without materializing.
    pub fn apply(&self, z: &Vector) -> Result<Vector> {
        let (k, d) = (self.a.ncols(), self.d);
        if z.len() != k * d {
            return Err(sizing(format!(
                "succinct apply: vector length {} != {}·{}",
                z.len(),
                k,
                d
            )));
        }
        let zm = unvec(z, k, d);
        let means = zm.column_mean();
        let mut centered = zm.clone();
        let mut mean_part = Matrix::zeros(k, d);
        for i in 0..k {
            for j in 0..d {
                centered[(i, j)] -= means[i];
                mean_part[(i, j)] = means[i];
            }
        }
        Ok(vec_rows(&(&self.a * centered + &self.b * mean_part)))
    }

    /// Smallest eigenvalue of the materialized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let b = super::min_eigenvalue(&self.b);
        if self.d == 1 {
            b
        } else {
            b.min(super::min_eigenvalue(&self.a))
        }
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        let b = super::max_abs_eigenvalue(&self.b);
        if self.d == 1 {
            b
        } else {
            b.max(super::max_abs_eigenvalue(&self.a))
        }
    }
}

/// Factors of `L = Σ Rᵀ (R Σ Rᵀ)⁻¹` for `R = [R1 ⊗ I; R2 ⊗ 1ᵀ]` and succinct `Σ`.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub la: Matrix,
    pub lb1: Matrix,
    pub lb2: Matrix,
    pub tilde_a: Matrix,
    pub tilde_b: Matrix,
    pub d: usize,
}

pub fn projection_pair(sigma: &SuccinctMatrix, r1: &Matrix, r2: &Matrix) -> Result<ProjectionPair> {
    let k = sigma.a.nrows();
    let d = sigma.d;
    if sigma.a.ncols() != k {
        return Err(sizing("projection_pair: covariance must be square"));
    }
    for (name, r) in [("R1", r1), ("R2", r2)] {
        if r.nrows() > 0 && r.ncols() != k {
            return Err(sizing(format!(
                "projection_pair: {name} has {} columns, expected {k}",
                r.ncols()
            )));
        }
    }
    let (p1, p2) = (r1.nrows(), r2.nrows());

    let la = if p1 == 0 || d == 1 {
        Matrix::zeros(k, p1)
    } else {
        let gram = symmetrize(&(r1 * &sigma.a * r1.transpose()));
        let inv = inverse(&gram, "R1 A R1ᵀ").map_err(|e| Error::Constraint(e.to_string()))?;
        &sigma.a * r1.transpose() * inv
    };

    let r_tilde = vstack(&as_rows(r1, k), &as_rows(r2, k))?;
    let (lb1, lb2) = if p1 + p2 == 0 {
        (Matrix::zeros(k, 0), Matrix::zeros(k, 0))
    } else {
        let gram = symmetrize(&(&r_tilde * &sigma.b * r_tilde.transpose()));
        let inv = inverse(&gram, "R̃ B R̃ᵀ").map_err(|e| Error::Constraint(e.to_string()))?;
        let lb = &sigma.b * r_tilde.transpose() * inv;
        (lb.columns(0, p1).into_owned(), lb.columns(p1, p2).into_owned())
    };

    let tilde_a = if p1 == 0 {
        Matrix::zeros(k, k)
    } else {
        &la * r1
    };
    let tilde_b = if p1 + p2 == 0 {
        Matrix::zeros(k, k)
    } else {
        &lb1 * as_rows(r1, k) + &lb2 * as_rows(r2, k)
    };
    let pair = ProjectionPair {
        la,
        lb1,
        lb2,
        tilde_a,
        tilde_b,
        d,
    };
    debug_assert!(pair.tilde_b.iter().all(|x| x.is_finite()));
    Ok(pair)
}

fn as_rows(r: &Matrix, k: usize) -> Matrix {
    if r.nrows() == 0 {
        Matrix::zeros(0, k)
    } else {
        r.clone()
    }
}

impl ProjectionPair {
    /// `L R` as a succinct matrix.
    pub fn lr(&self) -> SuccinctMatrix {
        SuccinctMatrix {
            a: self.tilde_a.clone(),
            b: self.tilde_b.clone(),
            d: self.d,
        }
    }

    /// `L r` for `r = (r1 values of length p1·d, r2 values of length p2)`.
    pub fn apply_l(&self, r1: &Vector, r2: &Vector) -> Result<Vector> {
        let k = self.la.nrows();
        let d = self.d;
        if r1.len() != self.la.ncols() * d || r2.len() != self.lb2.ncols() {
            return Err(sizing(format!(
                "apply_l: right-hand sides of length {}, {}",
                r1.len(),
                r2.len()
            )));
        }
        let mut out = Vector::zeros(k * d);
        if !r1.is_empty() {
            let part = SuccinctMatrix {
                a: if d == 1 { self.lb1.clone() } else { self.la.clone() },
                b: self.lb1.clone(),
                d,
            };
            out += part.apply(r1)?;
        }
        if !r2.is_empty() {
            let per_asym = &self.lb2 * r2 / d as f64;
            for i in 0..k {
                for j in 0..d {
                    out[i * d + j] += per_asym[i];
                }
            }
        }
        Ok(out)
    }

    pub fn l_dense(&self) -> Matrix {
        let (k, d) = (self.la.nrows(), self.d);
        let (n1, n2) = (self.la.ncols(), self.lb2.ncols());
        let mut out = Matrix::zeros(k * d, n1 * d + n2);
        if n1 > 0 {
            let la = if d == 1 { &self.lb1 } else { &self.la };
            out.columns_mut(0, n1 * d)
                .copy_from(&(kron(la, &p0(d)) + kron(&self.lb1, &p1(d))));
        }
        if n2 > 0 {
            let ones = Matrix::from_element(d, 1, 1.0 / d as f64);
            out.columns_mut(n1 * d, n2).copy_from(&kron(&self.lb2, &ones));
        }
        out
    }
}

/// Inverse of the structured matrix
/// `[[F⊗P0 + G00⊗P1, G01⊗1], [G10⊗1ᵀ, d·G11]]`
/// expressed through `F⁻¹` and `H = G⁻¹`.
#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub f_inv: Matrix,
    pub h00: Matrix,
    pub h01: Matrix,
    pub h10: Matrix,
    pub h11: Matrix,
    pub d: usize,
}

pub fn block_inverse(f: &Matrix, g: &Matrix, d: usize) -> Result<BlockInverse> {
    let m = f.nrows();
    if !f.is_square() || !g.is_square() || g.nrows() < m {
        return Err(sizing(format!(
            "block_inverse: F {:?}, G {:?}",
            f.shape(),
            g.shape()
        )));
    }
    let n = g.nrows() - m;
    let f_inv = inverse(f, "block F")?;
    let h = inverse(g, "block G")?;
    Ok(BlockInverse {
        f_inv,
        h00: h.view((0, 0), (m, m)).into_owned(),
        h01: h.view((0, m), (m, n)).into_owned(),
        h10: h.view((m, 0), (n, m)).into_owned(),
        h11: h.view((m, m), (n, n)).into_owned(),
        d,
    })
}

impl BlockInverse {
    pub fn to_dense(&self) -> Matrix {
        let (m, n, d) = (self.f_inv.nrows(), self.h11.nrows(), self.d);
        let inv_d = 1.0 / d as f64;
        let mut out = Matrix::zeros(m * d + n, m * d + n);
        out.view_mut((0, 0), (m * d, m * d))
            .copy_from(&(kron(&self.f_inv, &p0(d)) + kron(&self.h00, &p1(d))));
        out.view_mut((0, m * d), (m * d, n))
            .copy_from(&(kron(&self.h01, &Matrix::from_element(d, 1, inv_d))));
        out.view_mut((m * d, 0), (n, m * d))
            .copy_from(&(kron(&self.h10, &Matrix::from_element(1, d, inv_d))));
        out.view_mut((m * d, m * d), (n, n))
            .copy_from(&(&self.h11 * inv_d));
        out
    }
}

/// Materialize `[[F⊗P0 + G00⊗P1, G01⊗1], [G10⊗1ᵀ, d·G11]]`.
pub fn structured_block_matrix(f: &Matrix, g: &Matrix, d: usize) -> Matrix {
    let m = f.nrows();
    let n = g.nrows() - m;
    let g00 = g.view((0, 0), (m, m)).into_owned();
    let g01 = g.view((0, m), (m, n)).into_owned();
    let g10 = g.view((m, 0), (n, m)).into_owned();
    let g11 = g.view((m, m), (n, n)).into_owned();
    let mut out = Matrix::zeros(m * d + n, m * d + n);
    out.view_mut((0, 0), (m * d, m * d))
        .copy_from(&(kron(f, &p0(d)) + kron(&g00, &p1(d))));
    out.view_mut((0, m * d), (m * d, n))
        .copy_from(&kron(&g01, &Matrix::from_element(d, 1, 1.0)));
    out.view_mut((m * d, 0), (n, m * d))
        .copy_from(&kron(&g10, &Matrix::from_element(1, d, 1.0)));
    out.view_mut((m * d, m * d), (n, n))
        .copy_from(&(g11 * d as f64));
    out
}
