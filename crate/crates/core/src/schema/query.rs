use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bucket::BucketSpace;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// One row per symmetric value: contributes `selector ⊗ I`.
    Individual,
    /// Summed over the symmetric features: contributes `selector ⊗ 1ᵀ`.
    Aggregate,
}

/// Noise variance for every level, or one per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Variance {
    Scalar(f64),
    PerLevel(Vec<f64>),
}

impl Default for Variance {
    fn default() -> Self {
        Variance::Scalar(1.0)
    }
}

/// Declarative form of a query type, as written in an instance spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub name: String,
    pub kind: QueryKind,
    /// Asymmetric features the query is grouped by; empty means a grand total.
    #[serde(default)]
    pub by: Vec<String>,
    /// Optional coarsening of a grouped feature into groups of level labels.
    #[serde(default)]
    pub recode: BTreeMap<String, Vec<Vec<String>>>,
    #[serde(default)]
    pub variance: Variance,
}

impl QuerySpec {
    pub fn new(name: &str, kind: QueryKind, by: &[&str]) -> Self {
        QuerySpec {
            name: name.into(),
            kind,
            by: by.iter().map(|s| s.to_string()).collect(),
            recode: BTreeMap::new(),
            variance: Variance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryType {
    pub name: String,
    pub kind: QueryKind,
    /// 0/1 rows over the asymmetric buckets.
    pub selector: Matrix,
    pub variances: Vec<f64>,
}

impl QueryType {
    pub fn compile(spec: &QuerySpec, buckets: &BucketSpace, levels: usize) -> Result<Self> {
        let k = buckets.asym_card();
        let mut groupings: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
        for name in &spec.by {
            let f = buckets.asym_feature(name).ok_or_else(|| {
                Error::Schema(format!("query {}: unknown asymmetric feature {name}", spec.name))
            })?;
            let feature = &buckets.asym[f];
            let groups = match spec.recode.get(name) {
                None => (0..feature.card()).map(|l| vec![l]).collect(),
                Some(groups) => groups
                    .iter()
                    .map(|g| {
                        g.iter()
                            .map(|label| {
                                feature.level_index(label).ok_or_else(|| {
                                    Error::Schema(format!(
                                        "query {}: unknown level {label} of {name}",
                                        spec.name
                                    ))
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            groupings.push((f, groups));
        }
        for name in spec.recode.keys() {
            if !spec.by.contains(name) {
                return Err(Error::Schema(format!(
                    "query {}: recode of {name} which is not grouped",
                    spec.name
                )));
            }
        }

        let rows: usize = groupings.iter().map(|(_, g)| g.len()).product();
        let mut selector = Matrix::zeros(rows, k);
        for a in 0..k {
            let levels = buckets.asym_levels(a);
            // Row index of `a` in mixed radix over the groupings; `a` may fall in no group.
            let mut row = 0;
            let mut hit = true;
            for (f, groups) in &groupings {
                match groups.iter().position(|g| g.contains(&levels[*f])) {
                    Some(g) => row = row * groups.len() + g,
                    None => {
                        hit = false;
                        break;
                    }
                }
            }
            if hit {
                selector[(row, a)] = 1.0;
            }
        }

        let variances = match &spec.variance {
            Variance::Scalar(v) => vec![*v; levels],
            Variance::PerLevel(v) => {
                if v.len() != levels {
                    return Err(Error::Schema(format!(
                        "query {}: {} variances for {levels} levels",
                        spec.name,
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Schema(format!(
                "query {}: variances must be positive and finite",
                spec.name
            )));
        }
        Ok(QueryType {
            name: spec.name.clone(),
            kind: spec.kind,
            selector,
            variances,
        })
    }

    /// Number of measured rows at a node.
    pub fn measured_rows(&self, d: usize) -> usize {
        match self.kind {
            QueryKind::Individual => self.selector.nrows() * d,
            QueryKind::Aggregate => self.selector.nrows(),
        }
    }

    /// The query as a dense matrix over all buckets.
    pub fn dense(&self, d: usize) -> Matrix {
        match self.kind {
            QueryKind::Individual => linalg::kron(&self.selector, &Matrix::identity(d, d)),
            QueryKind::Aggregate => linalg::kron(&self.selector, &Matrix::from_element(1, d, 1.0)),
        }
    }

    pub fn answer(&self, x: &Vector, d: usize) -> Result<Vector> {
        match self.kind {
            QueryKind::Individual => linalg::kron_apply(&self.selector, &Matrix::identity(d, d), x),
            QueryKind::Aggregate => {
                linalg::kron_apply(&self.selector, &Matrix::from_element(1, d, 1.0), x)
            }
        }
    }
}

/// Where a query's rows sit inside the stacked per-node workload.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBlock {
    pub query: usize,
    pub kind: QueryKind,
    /// Offset in the selector rows of `w1` or `w2`.
    pub offset: usize,
    pub rows: usize,
}

/// `W = [W1 ⊗ I; W2 ⊗ 1ᵀ]` with one noise variance per selector row.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub w1: Matrix,
    pub w2: Matrix,
    pub sigma1: Vector,
    pub sigma2: Vector,
    pub d: usize,
    pub blocks: Vec<QueryBlock>,
}

impl Workload {
    pub fn build(queries: &[QueryType], level: usize, k: usize, d: usize) -> Result<Self> {
        let mut w1_rows: Vec<Matrix> = Vec::new();
        let mut w2_rows: Vec<Matrix> = Vec::new();
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        let mut blocks = Vec::new();
        for (qi, q) in queries.iter().enumerate() {
            if q.selector.ncols() != k {
                return Err(Error::Schema(format!("query {} selector width", q.name)));
            }
            let var = *q.variances.get(level).ok_or_else(|| {
                Error::Schema(format!("query {} has no variance for level {level}", q.name))
            })?;
            let n = q.selector.nrows();
            let (rows, sig) = match q.kind {
                QueryKind::Individual => (&mut w1_rows, &mut s1),
                QueryKind::Aggregate => (&mut w2_rows, &mut s2),
            };
            let offset = sig.len();
            rows.push(q.selector.clone());
            sig.extend(std::iter::repeat_n(var, n));
            blocks.push(QueryBlock {
                query: qi,
                kind: q.kind,
                offset,
                rows: n,
            });
        }
        let stack = |parts: &[Matrix]| {
            parts
                .iter()
                .try_fold(Matrix::zeros(0, k), |acc, m| linalg::vstack(&acc, m))
        };
        let w = Workload {
            w1: stack(&w1_rows)?,
            w2: stack(&w2_rows)?,
            sigma1: Vector::from_vec(s1),
            sigma2: Vector::from_vec(s2),
            d,
            blocks,
        };
        w.check_rank()?;
        Ok(w)
    }

    pub fn k(&self) -> usize {
        self.w1.ncols()
    }

    /// Information matrices of the two succinct components, `W1ᵀΣ1⁻¹W1` and
    /// `W1ᵀΣ1⁻¹W1 + d·W2ᵀΣ2⁻¹W2`.
    pub fn information(&self) -> (Matrix, Matrix) {
        let k = self.k();
        let mut info0 = Matrix::zeros(k, k);
        for (i, row) in self.w1.row_iter().enumerate() {
            info0 += row.transpose() * row / self.sigma1[i];
        }
        let mut info1 = info0.clone();
        for (i, row) in self.w2.row_iter().enumerate() {
            info1 += row.transpose() * row * (self.d as f64 / self.sigma2[i]);
        }
        (info0, info1)
    }

    fn check_rank(&self) -> Result<()> {
        let k = self.k();
        let (info0, info1) = self.information();
        if self.d > 1 && linalg::rank(&info0) < k {
            return Err(Error::Schema(
                "workload lacks full column rank within symmetric slices".into(),
            ));
        }
        if linalg::rank(&info1) < k {
            return Err(Error::Schema("workload lacks full column rank".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.w1.nrows() * self.d + self.w2.nrows()
    }

    /// Materialized workload and diagonal of its noise covariance.
    pub fn dense(&self) -> (Matrix, Vector) {
        let d = self.d;
        let top = linalg::kron(&self.w1, &Matrix::identity(d, d));
        let bottom = linalg::kron(&self.w2, &Matrix::from_element(1, d, 1.0));
        let w = linalg::vstack(&top, &bottom).expect("same width");
        let mut sig = Vector::zeros(self.rows());
        for i in 0..self.w1.nrows() {
            for s in 0..d {
                sig[i * d + s] = self.sigma1[i];
            }
        }
        for i in 0..self.w2.nrows() {
            sig[self.w1.nrows() * d + i] = self.sigma2[i];
        }
        (w, sig)
    }

    /// Exact answers `(y1, y2)` for a bucket vector.
    pub fn answer(&self, x: &Vector) -> Result<(Vector, Vector)> {
        let d = self.d;
        Ok((
            linalg::kron_apply(&self.w1, &Matrix::identity(d, d), x)?,
            linalg::kron_apply(&self.w2, &Matrix::from_element(1, d, 1.0), x)?,
        ))
    }
}

/// The per-node query set of the decennial redistricting tables.
pub fn census_queries() -> Vec<QuerySpec> {
    use QueryKind::*;
    let mut hhinst = QuerySpec::new("HHINSTLEVELS", Aggregate, &["hhgq"]);
    let levels = |r: std::ops::Range<usize>| r.map(|i| format!("hhgq{i}")).collect::<Vec<_>>();
    hhinst.recode.insert(
        "hhgq".into(),
        vec![levels(0..1), levels(1..5), levels(5..8)],
    );
    vec![
        QuerySpec::new("TOTAL", Aggregate, &[]),
        QuerySpec::new("CENRACE", Individual, &[]),
        QuerySpec::new("HISPANIC", Aggregate, &["hispanic"]),
        QuerySpec::new("VOTINGAGE", Aggregate, &["votingage"]),
        hhinst,
        QuerySpec::new("HHGQ", Aggregate, &["hhgq"]),
        QuerySpec::new("HISPANIC*CENRACE", Individual, &["hispanic"]),
        QuerySpec::new("VOTINGAGE*CENRACE", Individual, &["votingage"]),
        QuerySpec::new("VOTINGAGE*HISPANIC", Aggregate, &["votingage", "hispanic"]),
        QuerySpec::new("VOTINGAGE*HISPANIC*CENRACE", Individual, &["votingage", "hispanic"]),
        QuerySpec::new("DETAILED", Individual, &["hhgq", "hispanic", "votingage"]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::bucket::Feature;

    fn small() -> BucketSpace {
        BucketSpace::new(
            vec![Feature::new("t", &["t0", "t1"])],
            vec![Feature::new("r", &["r0", "r1", "r2"])],
        )
        .unwrap()
    }

    fn compile(specs: &[QuerySpec], b: &BucketSpace) -> Vec<QueryType> {
        specs
            .iter()
            .map(|s| QueryType::compile(s, b, 1).unwrap())
            .collect()
    }

    #[test]
    fn detailed_only() {
        let b = small();
        let q = compile(&[QuerySpec::new("DETAILED", QueryKind::Individual, &["t"])], &b);
        let w = Workload::build(&q, 0, 2, 3).unwrap();
        assert_eq!(w.w1, Matrix::identity(2, 2));
        assert_eq!(w.w2.nrows(), 0);
    }

    #[test]
    fn total_and_detailed() {
        let b = small();
        let q = compile(
            &[
                QuerySpec::new("TOTAL", QueryKind::Aggregate, &[]),
                QuerySpec::new("DETAILED", QueryKind::Individual, &["t"]),
            ],
            &b,
        );
        let w = Workload::build(&q, 0, 2, 3).unwrap();
        assert_eq!(w.w1, Matrix::identity(2, 2));
        assert_eq!(w.w2, Matrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(w.rows(), 7);
    }

    #[test]
    fn missing_detail_is_rank_error() {
        let b = small();
        let q = compile(&[QuerySpec::new("TOTAL", QueryKind::Aggregate, &[])], &b);
        assert!(matches!(Workload::build(&q, 0, 2, 3), Err(Error::Schema(_))));
    }

    #[test]
    fn census_row_counts() {
        let b = BucketSpace::census();
        let q = compile(&census_queries(), &b);
        let w = Workload::build(&q, 0, 32, 63).unwrap();
        assert_eq!(w.w1.nrows() * 63, 2583);
        assert_eq!(w.w2.nrows(), 20);
        assert_eq!(w.rows(), 2603);
    }

    #[test]
    fn recoded_selector() {
        let b = BucketSpace::census();
        let q = QueryType::compile(&census_queries()[4], &b, 1).unwrap();
        assert_eq!(q.selector.nrows(), 3);
        // Every asymmetric bucket lands in exactly one recoded group.
        for a in 0..32 {
            assert_eq!(q.selector.column(a).sum(), 1.0);
        }
        assert_eq!(q.selector.row(0).sum(), 4.0);
    }

    #[test]
    fn materialized_workload_full_rank() {
        let b = small();
        let q = compile(
            &[
                QuerySpec::new("TOTAL", QueryKind::Aggregate, &[]),
                QuerySpec::new("CENRACE", QueryKind::Individual, &[]),
                QuerySpec::new("DETAILED", QueryKind::Individual, &["t"]),
            ],
            &b,
        );
        let w = Workload::build(&q, 0, 2, 3).unwrap();
        let (dense, sig) = w.dense();
        assert_eq!(dense.nrows(), sig.len());
        assert_eq!(linalg::rank(&dense), 6);
        let x = Vector::from_fn(6, |i, _| i as f64);
        let (y1, y2) = w.answer(&x).unwrap();
        assert_eq!(linalg::vcat(&y1, &y2), dense * x);
    }
}
