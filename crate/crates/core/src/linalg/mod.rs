//! Dense small-matrix kernels and the succinct Kronecker-structured algebra.
//!
//! Vectors indexed by a product set `rows × cols` are flattened in row-major
//! order: entry `(i, j)` lives at `i * cols + j`. Every Kronecker routine in
//! this module follows that convention.

mod succinct;

pub use succinct::{
    block_inverse, p0, p1, projection_pair, structured_block_matrix, BlockInverse,
    ProjectionPair, SuccinctMatrix,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{sizing, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigen/singular values at or below this fraction of the largest one are treated as zero.
pub const RANK_RTOL: f64 = 1e-10;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix, rtol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rtol * scale
}

/// Moore–Penrose pseudoinverse.
///
/// Symmetric inputs go through a symmetric eigendecomposition, everything
/// else through an SVD. Spectral values below `RANK_RTOL` times the largest
/// magnitude are dropped.
pub fn pinv(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    if m.amax() == 0.0 {
        return Matrix::zeros(cols, rows);
    }
    if is_symmetric(m, 1e-12) {
        let eig = SymmetricEigen::new(symmetrize(m));
        let top = eig.eigenvalues.amax();
        let cutoff = RANK_RTOL * top;
        let inv = eig
            .eigenvalues
            .map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 });
        let v = &eig.eigenvectors;
        return symmetrize(&(v * Matrix::from_diagonal(&inv) * v.transpose()));
    }
    let (u, sv, v) = jacobi_svd(m);
    let top = sv.amax();
    let cutoff = RANK_RTOL * top;
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in sv.iter().enumerate() {
        if s > cutoff {
            out += v.column(k) * u.column(k).transpose() / s;
        }
    }
    out
}

/// Thin singular value decomposition `m = U diag(s) Vᵀ` by one-sided Jacobi rotations.
///
/// nalgebra's bidiagonal SVD loses accuracy on rank-deficient input, which is
/// the common case here, so the small matrices of this crate go through Jacobi.
pub fn jacobi_svd(m: &Matrix) -> (Matrix, Vector, Matrix) {
    let wide = m.nrows() < m.ncols();
    let mut u = if wide { m.transpose() } else { m.clone() };
    let p = u.ncols();
    let mut v = Matrix::identity(p, p);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = u.column(i).norm_squared();
                let beta = u.column(j).norm_squared();
                let gamma = u.column(i).dot(&u.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut u, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv = Vector::zeros(p);
    for k in 0..p {
        let n = u.column(k).norm();
        sv[k] = n;
        if n > 0.0 {
            u.column_mut(k).unscale_mut(n);
        }
    }
    if wide {
        (v, sv, u)
    } else {
        (u, sv, v)
    }
}

/// Numerical rank under the `RANK_RTOL` cutoff.
pub fn rank(m: &Matrix) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 || m.amax() == 0.0 {
        return 0;
    }
    let sv = jacobi_svd(m).1;
    let cutoff = RANK_RTOL * sv.amax();
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Inverse of a square matrix, refusing numerically singular input.
pub fn inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    if !m.is_square() {
        return Err(sizing(format!("{what}: cannot invert {}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if rank(m) < n {
        return Err(Error::Singular(what.to_string()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `(a ⊗ b) z` computed as `vec(a Z bᵀ)` with row-major `vec`.
pub fn kron_apply(a: &Matrix, b: &Matrix, z: &Vector) -> Result<Vector> {
    let (n1, n2) = (a.ncols(), b.ncols());
    if z.len() != n1 * n2 {
        return Err(sizing(format!(
            "kron_apply: vector length {} != {}·{}",
            z.len(),
            n1,
            n2
        )));
    }
    let zm = unvec(z, n1, n2);
    Ok(vec_rows(&(a * zm * b.transpose())))
}

/// Reshape a row-major flattened vector into a `rows × cols` matrix.
pub fn unvec(z: &Vector, rows: usize, cols: usize) -> Matrix {
    debug_assert_eq!(z.len(), rows * cols);
    Matrix::from_row_slice(rows, cols, z.as_slice())
}

/// Row-major flattening.
pub fn vec_rows(m: &Matrix) -> Vector {
    let (rows, cols) = m.shape();
    Vector::from_fn(rows * cols, |i, _| m[(i / cols, i % cols)])
}

/// Stack two matrices vertically; either may have zero rows.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
    if top.nrows() > 0 && bottom.nrows() > 0 && top.ncols() != bottom.ncols() {
        return Err(sizing(format!(
            "vstack: {} vs {} columns",
            top.ncols(),
            bottom.ncols()
        )));
    }
    let cols = if top.nrows() > 0 { top.ncols() } else { bottom.ncols() };
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), cols);
    if top.nrows() > 0 {
        out.rows_mut(0, top.nrows()).copy_from(top);
    }
    if bottom.nrows() > 0 {
        out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    }
    Ok(out)
}

pub fn vcat(top: &Vector, bottom: &Vector) -> Vector {
    let mut out = Vector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn max_abs_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.amax()
}

/// Orthonormal basis (as columns) for the null space of `m`.
pub fn null_space(m: &Matrix) -> Matrix {
    let n = m.ncols();
    if m.nrows() == 0 || m.amax() == 0.0 {
        return Matrix::identity(n, n);
    }
    // Eigenvectors of mᵀm with (numerically) zero eigenvalue.
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(symmetrize(&gram));
    let top = eig.eigenvalues.amax();
    let cutoff = RANK_RTOL * RANK_RTOL.sqrt() * top;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= cutoff).collect();
    let mut out = Matrix::zeros(n, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(i));
    }
    out
}

/// Greedy selection of linearly independent rows, in order.
///
/// Returns the indices of the kept rows. A dropped row is one that lies in the
/// span of the rows kept before it.
pub fn independent_rows(m: &Matrix, rtol: f64) -> Vec<usize> {
    let mut basis: Vec<Vector> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..m.nrows() {
        let mut v: Vector = m.row(i).transpose();
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        // Two rounds of Gram–Schmidt for stability.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let rem = v.norm();
        if rem > rtol * norm {
            basis.push(v / rem);
            kept.push(i);
        }
    }
    kept
}

pub fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.ncols());
    for (k, &i) in rows.iter().enumerate() {
        out.set_row(k, &m.row(i));
    }
    out
}

pub fn select_entries(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Basis (as rows) of the intersection of the row spaces of `a` and `b`.
pub fn row_space_intersection(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.ncols().max(b.ncols());
    if a.nrows() == 0 || b.nrows() == 0 {
        return Matrix::zeros(0, n);
    }
    // x = aᵀu = bᵀv  <=>  [aᵀ, -bᵀ] (u; v) = 0
    let mut stacked = Matrix::zeros(n, a.nrows() + b.nrows());
    stacked.columns_mut(0, a.nrows()).copy_from(&a.transpose());
    stacked
        .columns_mut(a.nrows(), b.nrows())
        .copy_from(&(-b.transpose()));
    let null = null_space(&stacked);
    let vecs = a.transpose() * null.rows(0, a.nrows());
    let rows = vecs.transpose();
    let keep = independent_rows(&rows, 1e-8);
    select_rows(&rows, &keep)
}

/// Reduced row echelon form, with entries snapped to the nearest integer
/// when they are within `snap` of it.
pub fn rref(m: &Matrix, snap: f64) -> Matrix {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut lead = 0;
    let mut r = 0;
    while r < rows && lead < cols {
        let pivot = (r..rows)
            .max_by(|&i, &j| a[(i, lead)].abs().total_cmp(&a[(j, lead)].abs()))
            .unwrap();
        if a[(pivot, lead)].abs() <= 1e-9 {
            lead += 1;
            continue;
        }
        a.swap_rows(pivot, r);
        let p = a[(r, lead)];
        for j in 0..cols {
            a[(r, j)] /= p;
        }
        for i in 0..rows {
            if i != r {
                let f = a[(i, lead)];
                if f != 0.0 {
                    for j in 0..cols {
                        a[(i, j)] -= f * a[(r, j)];
                    }
                }
            }
        }
        r += 1;
        lead += 1;
    }
    let mut out = a.rows(0, r).into_owned();
    out.apply(|x| {
        let n = x.round();
        if (*x - n).abs() <= snap {
            *x = n;
        }
    });
    out
}
