use serde::{Deserialize, Serialize};

use crate::error::{sizing, Error, Result};
use crate::linalg::{self, pinv, symmetrize, Matrix, SuccinctMatrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Succinct(SuccinctMatrix),
    Dense(Matrix),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Succinct(s) => s.nrows(),
            Covariance::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Covariance::Succinct(s) => s.to_dense(),
            Covariance::Dense(m) => m.clone(),
        }
    }

    pub fn densified(&self) -> Self {
        Covariance::Dense(self.to_dense())
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        match self {
            Covariance::Succinct(s) => s.apply(v),
            Covariance::Dense(m) => {
                if m.ncols() != v.len() {
                    return Err(sizing("covariance apply"));
                }
                Ok(m * v)
            }
        }
    }

    fn zip(
        &self,
        other: &Self,
        f: impl Fn(&Matrix, &Matrix) -> Matrix,
    ) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(sizing(format!(
                "covariances of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(match (self, other) {
            (Covariance::Succinct(a), Covariance::Succinct(b)) if a.d == b.d => {
                Covariance::Succinct(SuccinctMatrix {
                    a: f(&a.a, &b.a),
                    b: f(&a.b, &b.b),
                    d: a.d,
                })
            }
            _ => Covariance::Dense(f(&self.to_dense(), &other.to_dense())),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn symmetrize(&self) -> Self {
        match self {
            Covariance::Succinct(s) => Covariance::Succinct(s.symmetrize()),
            Covariance::Dense(m) => Covariance::Dense(symmetrize(m)),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Succinct(s) => s.min_eigenvalue(),
            Covariance::Dense(m) => linalg::min_eigenvalue(m),
        }
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Succinct(s) => s.max_abs_eigenvalue(),
            Covariance::Dense(m) => linalg::max_abs_eigenvalue(m),
        }
    }
}

/// A value vector with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub z: Vector,
    pub omega: Covariance,
}

impl Estimate {
    pub fn new(z: Vector, omega: Covariance) -> Result<Self> {
        if z.len() != omega.dim() {
            return Err(sizing(format!(
                "estimate of length {} with covariance of dimension {}",
                z.len(),
                omega.dim()
            )));
        }
        Ok(Estimate { z, omega })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn densified(&self) -> Self {
        Estimate {
            z: self.z.clone(),
            omega: self.omega.densified(),
        }
    }
}

/// Relative size of the component of `z1 - z2` outside `range(Ω1 + Ω2)` that
/// `combine` tolerates.
pub const RANGE_RTOL: f64 = 1e-6;

/// Best linear unbiased combination of two independent estimates of the same vector.
pub fn combine(e1: &Estimate, e2: &Estimate) -> Result<Estimate> {
    if e1.dim() != e2.dim() {
        return Err(sizing(format!(
            "combine: estimates of length {} and {}",
            e1.dim(),
            e2.dim()
        )));
    }
    let diff = &e1.z - &e2.z;
    let tol = RANGE_RTOL * (1.0 + diff.norm());
    match (&e1.omega, &e2.omega) {
        (Covariance::Succinct(o1), Covariance::Succinct(o2)) if o1.d == o2.d => {
            let pi = o1.add(o2)?;
            let pi_p = pi.pinv();
            let proj = pi.mul(&pi_p)?;
            let outside = &diff - proj.apply(&diff)?;
            check_range(outside.norm(), tol)?;
            let gain = o2.mul(&pi_p)?;
            let z = &e2.z + gain.apply(&diff)?;
            let omega = o2.sub(&gain.mul(o2)?)?.symmetrize();
            Ok(Estimate {
                z,
                omega: Covariance::Succinct(omega),
            })
        }
        _ => {
            let (o1, o2) = (e1.omega.to_dense(), e2.omega.to_dense());
            let pi = &o1 + &o2;
            let pi_p = pinv(&pi);
            let outside = &diff - &pi * (&pi_p * &diff);
            check_range(outside.norm(), tol)?;
            let gain = &o2 * &pi_p;
            let z = &e2.z + &gain * &diff;
            let omega = symmetrize(&(&o2 - &gain * &o2));
            Ok(Estimate {
                z,
                omega: Covariance::Dense(omega),
            })
        }
    }
}

fn check_range(outside: f64, tol: f64) -> Result<()> {
    if outside > tol {
        return Err(Error::Inconsistent(format!(
            "estimates disagree on exactly known directions (residual {outside:.3e} > {tol:.3e})"
        )));
    }
    Ok(())
}

/// Estimate of the sum of independent estimates.
pub fn aggregate_children(children: &[Estimate]) -> Result<Estimate> {
    let (first, rest) = children
        .split_first()
        .ok_or_else(|| sizing("aggregate_children: no children"))?;
    let mut z = first.z.clone();
    let mut omega = first.omega.clone();
    for c in rest {
        if c.dim() != z.len() {
            return Err(sizing("aggregate_children: child dimensions differ"));
        }
        z += &c.z;
        omega = omega.add(&c.omega)?;
    }
    Ok(Estimate { z, omega })
}

/// Serialized covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceRecord {
    Succinct {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        d: usize,
    },
    Dense {
        m: Vec<Vec<f64>>,
    },
}

/// One line of an estimate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub node: String,
    pub z: Vec<f64>,
    pub covariance: CovarianceRecord,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> Result<Matrix> {
    let cols = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != cols) {
        return Err(Error::Parse("ragged matrix".into()));
    }
    Ok(Matrix::from_row_iterator(r.len(), cols, r.iter().flatten().copied()))
}

impl Estimate {
    pub fn to_record(&self, node: &str) -> EstimateRecord {
        EstimateRecord {
            node: node.to_string(),
            z: self.z.iter().copied().collect(),
            covariance: match &self.omega {
                Covariance::Succinct(s) => CovarianceRecord::Succinct {
                    a: rows(&s.a),
                    b: rows(&s.b),
                    d: s.d,
                },
                Covariance::Dense(m) => CovarianceRecord::Dense { m: rows(m) },
            },
        }
    }

    pub fn from_record(rec: &EstimateRecord) -> Result<Self> {
        let omega = match &rec.covariance {
            CovarianceRecord::Succinct { a, b, d } => {
                Covariance::Succinct(SuccinctMatrix::new(from_rows(a)?, from_rows(b)?, *d)?)
            }
            CovarianceRecord::Dense { m } => Covariance::Dense(from_rows(m)?),
        };
        Estimate::new(Vector::from_column_slice(&rec.z), omega)
    }
}
