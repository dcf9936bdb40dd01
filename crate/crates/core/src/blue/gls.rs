use super::estimate::{Covariance, Estimate};
use crate::error::{sizing, Error, Result};
use crate::linalg::{self, inverse, projection_pair, symmetrize, Matrix, SuccinctMatrix, Vector};
use crate::noise::NoisyMeasurement;
use crate::schema::{ConstraintSet, Workload};

/// Generalized least squares for the structured workload `[W1 ⊗ I; W2 ⊗ 1ᵀ]`
/// with diagonal noise, returning a succinct covariance.
pub fn gls(w: &Workload, m: &NoisyMeasurement) -> Result<Estimate> {
    let (k, d) = (w.k(), w.d);
    if m.y1.len() != w.w1.nrows() * d
        || m.y2.len() != w.w2.nrows()
        || m.sigma1.len() != w.w1.nrows()
        || m.sigma2.len() != w.w2.nrows()
    {
        return Err(sizing(format!("node {}: measurement does not match workload", m.node_id)));
    }
    let w1s = scale_rows(&w.w1, &m.sigma1).transpose();
    let w2s = scale_rows(&w.w2, &m.sigma2).transpose();
    let info0 = &w1s * &w.w1;
    let info1 = &info0 + &w2s * &w.w2 * d as f64;
    let rank_err = |e: Error| Error::Rank(format!("workload information matrix: {e}"));
    let b = symmetrize(&inverse(&info1, "W1ᵀΣ1⁻¹W1 + d·W2ᵀΣ2⁻¹W2").map_err(rank_err)?);
    let a = if d == 1 {
        b.clone()
    } else {
        symmetrize(&inverse(&info0, "W1ᵀΣ1⁻¹W1").map_err(rank_err)?)
    };
    let mut rhs = linalg::kron_apply(&w1s, &Matrix::identity(d, d), &m.y1)?;
    if w.w2.nrows() > 0 {
        rhs += linalg::kron_apply(&w2s, &Matrix::from_element(d, 1, 1.0), &m.y2)?;
    }
    let sigma = SuccinctMatrix::new(a, b, d)?;
    debug_assert_eq!(sigma.ncols(), k * d);
    let z = sigma.apply(&rhs)?;
    Estimate::new(z, Covariance::Succinct(sigma))
}

fn scale_rows(w: &Matrix, variances: &Vector) -> Matrix {
    let mut out = w.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row /= variances[i];
    }
    out
}

/// Generalized least squares on an explicit workload and diagonal noise variances.
pub fn gls_dense(w: &Matrix, variances: &Vector, y: &Vector) -> Result<Estimate> {
    if w.nrows() != variances.len() || w.nrows() != y.len() {
        return Err(sizing("gls_dense: workload, variances and measurements disagree"));
    }
    let ws = scale_rows(w, variances).transpose();
    let info = &ws * w;
    let sigma = symmetrize(
        &inverse(&info, "WᵀΣ⁻¹W").map_err(|e| Error::Rank(format!("workload: {e}")))?,
    );
    let z = &sigma * (&ws * y);
    Estimate::new(z, Covariance::Dense(sigma))
}

/// Project an unconstrained estimate onto the equalities of `cs`.
pub fn ecgls(est: &Estimate, cs: &ConstraintSet) -> Result<Estimate> {
    if !cs.has_equalities() {
        return Ok(est.clone());
    }
    if est.dim() != cs.n() {
        return Err(sizing("ecgls: constraints and estimate differ in dimension"));
    }
    match &est.omega {
        Covariance::Succinct(s) if s.d == cs.d => {
            let d = cs.d;
            let pair = projection_pair(s, &cs.r1, &cs.r2)?;
            let res1 = if cs.r1.nrows() > 0 {
                linalg::kron_apply(&cs.r1, &Matrix::identity(d, d), &est.z)? - &cs.r1_vals
            } else {
                Vector::zeros(0)
            };
            let res2 = if cs.r2.nrows() > 0 {
                linalg::kron_apply(&cs.r2, &Matrix::from_element(1, d, 1.0), &est.z)? - &cs.r2_vals
            } else {
                Vector::zeros(0)
            };
            let z = &est.z - pair.apply_l(&res1, &res2)?;
            let k = cs.k;
            let eye = Matrix::identity(k, k);
            let omega = SuccinctMatrix::new(
                (&eye - &pair.tilde_a) * &s.a,
                (&eye - &pair.tilde_b) * &s.b,
                d,
            )?
            .symmetrize();
            Estimate::new(z, Covariance::Succinct(omega))
        }
        _ => {
            let sigma = est.omega.to_dense();
            let r = cs.req();
            let gram = symmetrize(&(&r * &sigma * r.transpose()));
            let inv = inverse(&gram, "RΣRᵀ").map_err(|e| Error::Constraint(e.to_string()))?;
            let l = &sigma * r.transpose() * inv;
            let z = &est.z - &l * (&r * &est.z - cs.rval());
            let n = sigma.nrows();
            let omega = symmetrize(&((Matrix::identity(n, n) - &l * &r) * &sigma));
            Estimate::new(z, Covariance::Dense(omega))
        }
    }
}

/// Per-node estimate: GLS on the node's own measurements, then its equalities.
pub fn node_estimate(
    w: &Workload,
    m: &NoisyMeasurement,
    cs: &ConstraintSet,
    dense: bool,
) -> Result<Estimate> {
    let est = if dense {
        let (wd, _) = w.dense();
        let mut var = Vector::zeros(w.rows());
        let d = w.d;
        for i in 0..w.w1.nrows() {
            for s in 0..d {
                var[i * d + s] = m.sigma1[i];
            }
        }
        for i in 0..w.w2.nrows() {
            var[w.w1.nrows() * d + i] = m.sigma2[i];
        }
        gls_dense(&wd, &var, &linalg::vcat(&m.y1, &m.y2))?
    } else {
        gls(w, m)?
    };
    ecgls(&est, cs)
}
