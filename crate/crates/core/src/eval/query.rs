use crate::linalg::{kron, Matrix};
use crate::schema::{BucketSpace, Feature};

/// A marginal over the full bucket space: 0/1 rows summing buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalQuery {
    pub name: String,
    pub selector: Matrix,
}

fn feature_selector(features: &[Feature], f: usize, levels: impl Fn(usize) -> Vec<usize>, card: usize) -> Matrix {
    let mut m = Matrix::zeros(features[f].card(), card);
    for i in 0..card {
        m[(levels(i)[f], i)] = 1.0;
    }
    m
}

impl MarginalQuery {
    pub fn total(n: usize) -> Self {
        MarginalQuery {
            name: "total".into(),
            selector: Matrix::from_element(1, n, 1.0),
        }
    }

    pub fn detailed(n: usize) -> Self {
        MarginalQuery {
            name: "detailed".into(),
            selector: Matrix::identity(n, n),
        }
    }

    /// Total, one marginal per asymmetric and per symmetric feature, and the
    /// detailed cells.
    pub fn defaults(b: &BucketSpace) -> Vec<Self> {
        let (k, d) = (b.asym_card(), b.sym_card());
        let mut out = vec![Self::total(k * d)];
        for f in 0..b.asym.len() {
            let s = feature_selector(&b.asym, f, |a| b.asym_levels(a), k);
            out.push(MarginalQuery {
                name: b.asym[f].name.clone(),
                selector: kron(&s, &Matrix::from_element(1, d, 1.0)),
            });
        }
        for f in 0..b.sym.len() {
            let s = feature_selector(&b.sym, f, |s| b.sym_levels(s), d);
            out.push(MarginalQuery {
                name: b.sym[f].name.clone(),
                selector: kron(&Matrix::from_element(1, k, 1.0), &s),
            });
        }
        out.push(Self::detailed(k * d));
        out
    }
}
