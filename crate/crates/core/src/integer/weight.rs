//! Per-child weight matrices `P_v = (Q(Ω + αRᵀR)Qᵀ)⁻¹` for the projection passes.

use crate::blue::Covariance;
use crate::error::{Error, Result};
use crate::linalg::{inverse, Matrix, SuccinctMatrix, Vector};
use crate::schema::{ConstraintSet, PassKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    /// The total pass: a single scalar for the one projected row.
    Scalar(f64),
    Succinct(SuccinctMatrix),
    Dense(Matrix),
}

/// Rows of the projection operator over `n` buckets.
pub fn projection(q: PassKind, n: usize) -> Matrix {
    match q {
        PassKind::Total => Matrix::from_element(1, n, 1.0),
        PassKind::Full => Matrix::identity(n, n),
    }
}

pub fn project(q: PassKind, z: &Vector) -> Vector {
    match q {
        PassKind::Total => Vector::from_element(1, z.sum()),
        PassKind::Full => z.clone(),
    }
}

impl Weight {
    /// `QᵀPQ` over the full bucket space of size `n`.
    pub fn hessian(&self, n: usize) -> Matrix {
        match self {
            Weight::Scalar(p) => Matrix::from_element(n, n, *p),
            Weight::Succinct(s) => s.to_dense(),
            Weight::Dense(m) => m.clone(),
        }
    }

    /// `P w` for a projected vector `w`.
    pub fn apply(&self, w: &Vector) -> Result<Vector> {
        match self {
            Weight::Scalar(p) => Ok(w * *p),
            Weight::Succinct(s) => s.apply(w),
            Weight::Dense(m) => Ok(m * w),
        }
    }
}

pub fn weight_matrix(omega: &Covariance, cs: &ConstraintSet, q: PassKind, alpha: f64) -> Result<Weight> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Usage(format!("alpha must be positive, got {alpha}")));
    }
    match omega {
        Covariance::Succinct(s) => {
            let d = s.d;
            let r1tr1 = cs.r1.transpose() * &cs.r1;
            let r2tr2 = cs.r2.transpose() * &cs.r2;
            let c0 = &s.a + &r1tr1 * alpha;
            let c1 = &s.b + &r1tr1 * alpha + r2tr2 * (d as f64 * alpha);
            match q {
                PassKind::Total => {
                    let t = d as f64 * c1.sum();
                    if !t.is_finite() || t <= 0.0 {
                        return Err(Error::Singular(format!("total-pass weight denominator {t}")));
                    }
                    Ok(Weight::Scalar(1.0 / t))
                }
                PassKind::Full => {
                    let b = inverse(&c1, "weight C1")?;
                    // With a single symmetric level the P0 component is void.
                    let a = if d == 1 { b.clone() } else { inverse(&c0, "weight C0")? };
                    Ok(Weight::Succinct(SuccinctMatrix::new(a, b, d)?))
                }
            }
        }
        Covariance::Dense(m) => {
            let r = cs.req();
            let c = m + r.transpose() * &r * alpha;
            match q {
                PassKind::Total => {
                    let t = c.sum();
                    if !t.is_finite() || t <= 0.0 {
                        return Err(Error::Singular(format!("total-pass weight denominator {t}")));
                    }
                    Ok(Weight::Scalar(1.0 / t))
                }
                PassKind::Full => Ok(Weight::Dense(inverse(&c, "weight Ω + αRᵀR")?)),
            }
        }
    }
}
