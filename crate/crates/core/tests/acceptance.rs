//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use hierblue::blue::{combine, solve_tree_blue, Covariance, Estimate, SolveOptions};
use hierblue::eval::{baseline_topdown, run_experiment, Algorithm, ExperimentOptions, MarginalQuery};
use hierblue::integer::qp::solve_qp;
use hierblue::integer::{bluedown, weight_matrix, BlueDownOptions, MultipassOptions, RoundPass, RoundingProblem, Weight};
use hierblue::linalg::{kron, projection_pair, vstack, Matrix, SuccinctMatrix, Vector};
use hierblue::noise::{measure_tree, sample_discrete_gaussian};
use hierblue::schema::{build_instance, ConstraintSet, InstanceSpec, PassKind};
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spd(rng: &mut impl Rng, k: usize) -> Matrix {
    let m = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + Matrix::identity(k, k) * 0.5
}

fn oracle_equivalence() -> Check {
    for seed in 0..50 {
        let (schema, tree, nmf) = random_instance(seed);
        ensure(tree.len() <= 15 && schema.n() <= 6, || format!("seed {seed}: instance too large"))?;
        let oracle = dense_oracle(&schema, &tree, &nmf);
        let rep = solve_tree_blue(&schema, &tree, &nmf, SolveOptions::default()).map_err(|e| e.to_string())?;
        for i in 0..tree.len() {
            let x = &oracle.x[i];
            let err = (&rep.values[i] - x).amax();
            ensure(err <= 1e-7 * (1.0 + x.amax()), || format!("seed {seed} node {i}: value error {err:e}"))?;
            let c = rep.covariances[i].as_ref().unwrap().to_dense();
            let cerr = (&c - &oracle.cov_blocks[i]).amax();
            ensure(cerr <= 1e-6, || format!("seed {seed} node {i}: covariance error {cerr:e}"))?;
        }
    }
    Ok("50 instances".into())
}

fn succinct_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_succinct = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(1..=4);
        let d = [2, 3, 5][rng.random_range(0..3)];
        let a = Matrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0));
        let b = Matrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0));
        SuccinctMatrix::new(a, b, d).unwrap()
    };
    for case in 0..200 {
        let m1 = random_succinct(&mut rng);
        let k = m1.a.nrows();
        let m2 = SuccinctMatrix::new(
            Matrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0)),
            Matrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0)),
            m1.d,
        )
        .unwrap();
        let err = (m1.mul(&m2).unwrap().to_dense() - m1.to_dense() * m2.to_dense()).amax();
        ensure(err <= 1e-11, || format!("mul case {case}: {err:e}"))?;
    }
    for case in 0..200 {
        let mut m = random_succinct(&mut rng);
        let k = m.a.nrows();
        if case % 2 == 0 && k > 1 {
            let c = m.a.column(0).clone_owned();
            m.a.set_column(k - 1, &c);
        }
        let x = m.to_dense();
        let xp = m.pinv().to_dense();
        let scale = 1.0 + x.amax() * xp.amax();
        let worst = [
            (&x * &xp * &x - &x).amax() / x.amax().max(1.0),
            (&xp * &x * &xp - &xp).amax() / xp.amax().max(1.0),
            { let l = &x * &xp; (&l - l.transpose()).amax() },
            { let r = &xp * &x; (&r - r.transpose()).amax() },
        ]
        .into_iter()
        .fold(0.0, f64::max);
        ensure(worst <= 1e-9 * scale, || format!("pinv case {case}: {worst:e}"))?;
    }
    for case in 0..200 {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=3);
        let omega = SuccinctMatrix::new(spd(&mut rng, k), spd(&mut rng, k), d).unwrap();
        let mut cs = ConstraintSet::empty(k, d);
        let r1: Vec<f64> = (0..k).map(|_| rng.random_range(0..2) as f64).collect();
        if r1.iter().any(|&v| v != 0.0) && rng.random_bool(0.5) {
            cs.push_r1(&r1, &vec![r1.iter().sum::<f64>(); d]).unwrap();
        }
        let r2: Vec<f64> = (0..k).map(|_| rng.random_range(1..3) as f64).collect();
        if rng.random_bool(0.7) {
            cs.push_r2(&r2, d as f64 * r2.iter().sum::<f64>()).unwrap();
        }
        cs.normalize().unwrap();
        let alpha = rng.random_range(0.1..3.0);
        let q = if rng.random_bool(0.5) { PassKind::Total } else { PassKind::Full };
        let n = k * d;
        let r = cs.req();
        let qm = match q {
            PassKind::Total => Matrix::from_element(1, n, 1.0),
            PassKind::Full => Matrix::identity(n, n),
        };
        let oracle = (&qm * (omega.to_dense() + r.transpose() * &r * alpha) * qm.transpose()).try_inverse().unwrap();
        let got = match weight_matrix(&Covariance::Succinct(omega), &cs, q, alpha).map_err(|e| e.to_string())? {
            Weight::Scalar(p) => Matrix::from_element(1, 1, p),
            w => w.hessian(n),
        };
        let err = (&got - &oracle).amax();
        ensure(err <= 1e-9 * (1.0 + oracle.amax()), || format!("weight case {case}: {err:e}"))?;
    }
    for case in 0..200 {
        let k = 3;
        let d = rng.random_range(2..=3);
        let sigma = SuccinctMatrix::new(spd(&mut rng, k), spd(&mut rng, k), d).unwrap();
        let (p1, p2) = loop {
            let p = (rng.random_range(0..2), rng.random_range(0..2));
            if p.0 + p.1 > 0 {
                break p;
            }
        };
        let r1 = Matrix::from_fn(p1, k, |_, _| rng.random_range(-1.0..1.0));
        let r2 = Matrix::from_fn(p2, k, |_, _| rng.random_range(-1.0..1.0));
        let pair = projection_pair(&sigma, &r1, &r2).map_err(|e| e.to_string())?;
        let r = vstack(&kron(&r1, &Matrix::identity(d, d)), &kron(&r2, &Matrix::from_element(1, d, 1.0))).unwrap();
        let s = sigma.to_dense();
        let l = &s * r.transpose() * (&r * &s * r.transpose()).try_inverse().unwrap();
        let err = (pair.l_dense() - &l).amax().max((pair.lr().to_dense() - &l * &r).amax());
        ensure(err <= 1e-8, || format!("projection pair case {case}: {err:e}"))?;
    }
    Ok("4 × 200 cases".into())
}

/// Joint GLS of two independent estimates restricted to the directions both leave free.
fn joint_gls_oracle(o1: &Matrix, o2: &Matrix, z1: &Vector, z2: &Vector, exact: Option<&Vector>) -> (Vector, Matrix) {
    let n = z1.len();
    let (base, basis) = match exact {
        None => (Vector::zeros(n), Matrix::identity(n, n)),
        Some(c) => {
            let mut m = Matrix::identity(n, n);
            m.set_column(0, c);
            let q = m.qr().q();
            (c * c.dot(z1), q.columns(1, n - 1).into_owned())
        }
    };
    let a1 = (basis.transpose() * o1 * &basis).try_inverse().unwrap();
    let a2 = (basis.transpose() * o2 * &basis).try_inverse().unwrap();
    let ou = (&a1 + &a2).try_inverse().unwrap();
    let u = &ou * (a1 * basis.transpose() * z1 + a2 * basis.transpose() * z2);
    (base + &basis * u, &basis * ou * basis.transpose())
}

fn combine_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let (cov1, cov2, o1, o2, n) = if case % 3 == 0 {
            let (k, d) = (rng.random_range(1..=3), rng.random_range(2..=3));
            let s1 = SuccinctMatrix::new(spd(&mut rng, k), spd(&mut rng, k), d).unwrap();
            let s2 = SuccinctMatrix::new(spd(&mut rng, k), spd(&mut rng, k), d).unwrap();
            let (d1, d2) = (s1.to_dense(), s2.to_dense());
            (Covariance::Succinct(s1), Covariance::Succinct(s2), d1, d2, k * d)
        } else {
            let n = rng.random_range(2..=6);
            let (d1, d2) = (spd(&mut rng, n), spd(&mut rng, n));
            (Covariance::Dense(d1.clone()), Covariance::Dense(d2.clone()), d1, d2, n)
        };
        let mut z1 = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let mut z2 = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        // Every third dense case shares an exactly known direction.
        let exact = (case % 3 == 2).then(|| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize());
        let (e1, e2, o1, o2) = match &exact {
            None => (Estimate { z: z1.clone(), omega: cov1 }, Estimate { z: z2.clone(), omega: cov2 }, o1, o2),
            Some(c) => {
                let pi = Matrix::identity(n, n) - c * c.transpose();
                let (p1, p2) = (&pi * o1 * &pi, &pi * o2 * &pi);
                let shift = c * 1.5;
                z1 = &pi * &z1 + &shift;
                z2 = &pi * &z2 + &shift;
                (
                    Estimate { z: z1.clone(), omega: Covariance::Dense(p1.clone()) },
                    Estimate { z: z2.clone(), omega: Covariance::Dense(p2.clone()) },
                    p1,
                    p2,
                )
            }
        };
        let got = combine(&e1, &e2).map_err(|e| format!("case {case}: {e}"))?;
        let (z, om) = joint_gls_oracle(&o1, &o2, &z1, &z2, exact.as_ref());
        let g = got.omega.to_dense();
        let err = (&got.z - &z).amax().max((&g - &om).amax());
        ensure(err <= 1e-8 * (1.0 + z.amax().max(om.amax())), || format!("case {case}: error {err:e}"))?;
        for (name, o) in [("Ω1", &o1), ("Ω2", &o2)] {
            let diff = o - &g;
            let lo = nalgebra::SymmetricEigen::new((&diff + diff.transpose()) * 0.5).eigenvalues.min();
            ensure(lo >= -1e-8, || format!("case {case}: {name} − Ω has eigenvalue {lo:e}"))?;
        }
    }
    Ok("100 cases".into())
}

fn unbiasedness() -> Check {
    let mut spec = InstanceSpec::toy_census(21);
    spec.level_arities = vec![2, 2];
    let (schema, tree) = build_instance(spec).map_err(|e| e.to_string())?;
    ensure(tree.len() == 7, || format!("{} nodes", tree.len()))?;
    let reps = 2000;
    let n = schema.n();
    let mut sum = vec![Vector::zeros(n); 7];
    let mut outer = vec![Matrix::zeros(n, n); 7];
    let mut cov = Vec::new();
    for r in 0..reps {
        let nmf = measure_tree(&schema, &tree, 100_000 + r).map_err(|e| e.to_string())?;
        let rep = solve_tree_blue(&schema, &tree, &nmf, SolveOptions::default()).map_err(|e| e.to_string())?;
        if cov.is_empty() {
            cov = rep.covariances.iter().map(|c| c.as_ref().unwrap().to_dense()).collect();
        }
        for i in 0..7 {
            let e = &rep.values[i] - tree.nodes[i].truth_vector().unwrap();
            sum[i] += &e;
            outer[i] += &e * e.transpose();
        }
    }
    let m = reps as f64;
    let mut worst_cov = 0.0f64;
    for i in 0..7 {
        let mean = &sum[i] / m;
        for b in 0..n {
            let sd = cov[i][(b, b)].max(0.0).sqrt();
            ensure(mean[b].abs() <= 4.0 * sd / m.sqrt() + 1e-12, || {
                format!("node {i} bucket {b}: mean error {} vs bound {}", mean[b], 4.0 * sd / m.sqrt())
            })?;
        }
        let emp = (&outer[i] - &mean * mean.transpose() * m) / (m - 1.0);
        let rel = (&emp - &cov[i]).norm() / cov[i].norm();
        worst_cov = worst_cov.max(rel);
        ensure(rel <= 0.15, || format!("node {i}: covariance off by {rel:.3}"))?;
    }
    Ok(format!("2000 replicates, worst covariance deviation {worst_cov:.3}"))
}

fn feasibility() -> Check {
    let mut runs = 0;
    for seed in 0..24 {
        let mut spec = InstanceSpec::toy_census(seed);
        spec.level_arities = [vec![3], vec![2, 3], vec![3, 2], vec![2, 2, 2], vec![4, 5, 5]][seed as usize % 5].clone();
        spec.constraints.facility_prob = [0.2, 0.5, 0.8][seed as usize % 3];
        spec.constraints.cell_zero_prob = [0.1, 0.3, 0.6][(seed as usize / 3) % 3];
        spec.constraints.bound_slack = seed % 3;
        let (schema, tree) = build_instance(spec).map_err(|e| e.to_string())?;
        let nmf = measure_tree(&schema, &tree, seed).map_err(|e| e.to_string())?;
        let opts = BlueDownOptions::default();
        for (name, rep) in [
            ("bluedown", bluedown(&schema, &tree, &nmf, opts)),
            ("baseline", baseline_topdown(&schema, &tree, &nmf, opts)),
        ] {
            let rep = rep.map_err(|e| format!("seed {seed} {name}: {e}"))?;
            if let Some(v) = feasibility_violation(&tree, &rep.values) {
                return Err(format!("seed {seed} {name}: {v}"));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} solves"))
}

fn integer_optimality() -> Check {
    for seed in 0..50 {
        let case = rounding_case(seed, 12);
        let pass = RoundPass {
            q: case.q,
            fractional: &case.fractional,
            consistency: if case.pinned.is_some() { &[PassKind::Total] } else { &[] },
            previous: case.pinned.as_deref(),
        };
        let prob = RoundingProblem::build(&case.group(), &pass).map_err(|e| e.to_string())?;
        let best = enumerate_rounding(&case).ok_or("no feasible rounding")?;
        let (y, _) = prob.solve().map_err(|e| e.to_string())?.ok_or("rounder found nothing")?;
        let z: Vec<Vector> = prob
            .assemble(&y)
            .iter()
            .map(|v| Vector::from_iterator(v.len(), v.iter().map(|&x| x as f64)))
            .collect();
        ensure(rounding_feasible(&case, &z), || format!("seed {seed}: infeasible rounding"))?;
        let cost = rounding_cost(case.q, &case.fractional, &z);
        ensure((cost - best).abs() <= 1e-9, || format!("seed {seed}: cost {cost} vs optimum {best}"))?;
    }
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let qp = random_qp(seed, 30, 10);
        let sol = solve_qp(&qp).map_err(|e| format!("qp {seed}: {e}"))?;
        let r = qp.kkt(&sol).max();
        worst = worst.max(r);
        ensure(r <= 1e-7, || format!("qp {seed}: KKT residual {r:e}"))?;
    }
    Ok(format!("50 roundings, 200 QPs, worst KKT {worst:.1e}"))
}

fn equivalence() -> Check {
    let relaxed = BlueDownOptions {
        multipass: MultipassOptions { round: false, ..Default::default() },
        ..Default::default()
    };
    let mut compared = 0;
    for seed in 0..100 {
        let (schema, tree, nmf) = random_instance(seed);
        let blue = solve_tree_blue(&schema, &tree, &nmf, SolveOptions::default()).map_err(|e| e.to_string())?;
        if blue.values.iter().any(|v| v.min() < 1e-6) {
            continue;
        }
        let levels = schema.levels();
        let schema = schema.with_passes(vec![vec![PassKind::Full]; levels]).map_err(|e| e.to_string())?;
        let rep = bluedown(&schema, &tree, &nmf, relaxed).map_err(|e| e.to_string())?;
        for (i, (a, b)) in rep.values.iter().zip(&blue.values).enumerate() {
            let err = (a - b).amax();
            ensure(err <= 1e-7 * (1.0 + b.amax()), || format!("seed {seed} node {i}: {err:e}"))?;
        }
        compared += 1;
    }
    ensure(compared >= 10, || format!("only {compared} instances qualified"))?;
    Ok(format!("{compared} instances with inactive inequalities"))
}

fn qualitative() -> Check {
    let (schema, tree) = build_instance(InstanceSpec::toy_census(2024)).map_err(|e| e.to_string())?;
    let opts = ExperimentOptions {
        replicates: 10,
        algorithms: vec![Algorithm::BlueDown, Algorithm::TopDown],
        seed: 500,
        solve: BlueDownOptions::default(),
        levels: vec![1, 2],
    };
    let exp = run_experiment(&schema, &tree, &opts).map_err(|e| e.to_string())?;
    ensure(exp.failures.is_empty(), || format!("{} solver failures", exp.failures.len()))?;
    let queries = MarginalQuery::defaults(&schema.buckets);
    let mean = |algo: &str, level: usize, q: &str| {
        let v: Vec<f64> = exp
            .rows
            .iter()
            .filter(|r| r.algorithm == algo && r.level == level && r.query == q && r.pop_bin.is_none())
            .map(|r| r.raw_l1)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut better = 0;
    let mut cells = 0;
    for level in [1, 2] {
        for q in &queries {
            cells += 1;
            if mean("bluedown", level, &q.name) <= mean("topdown", level, &q.name) {
                better += 1;
            }
        }
    }
    let share = better as f64 / cells as f64;
    ensure(share >= 0.7, || format!("bluedown no worse on {better}/{cells} cells"))?;
    // Level 1 totals are invariants, so the strict comparison is at level 2.
    for q in ["total", "hhgq"] {
        let (a, b) = (mean("bluedown", 2, q), mean("topdown", 2, q));
        ensure(a < b, || format!("level 2 {q}: bluedown {a} vs baseline {b}"))?;
    }
    Ok(format!(
        "no worse on {better}/{cells} cells; level 2 total {:.3} vs {:.3}, hhgq {:.3} vs {:.3}",
        mean("bluedown", 2, "total"),
        mean("topdown", 2, "total"),
        mean("bluedown", 2, "hhgq"),
        mean("topdown", 2, "hhgq")
    ))
}

fn sampler() -> Check {
    let mut details = Vec::new();
    for (i, sigma2) in [0.5, 1.0, 4.0].into_iter().enumerate() {
        let radius = 40i64;
        let w: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma2)).exp()).collect();
        let z: f64 = w.iter().sum();
        let pmf: Vec<f64> = w.iter().map(|v| v / z).collect();
        let n = 100_000;
        let mut counts = vec![0u64; pmf.len()];
        let mut rng = ChaCha20Rng::seed_from_u64(31 + i as u64);
        for _ in 0..n {
            let x = sample_discrete_gaussian(0, sigma2, &mut rng);
            ensure(x.abs() <= radius, || format!("σ²={sigma2}: draw {x} far in the tail"))?;
            counts[(x + radius) as usize] += 1;
        }
        // Pool outer values into the two tails until every bin expects at least 5.
        let expected: Vec<f64> = pmf.iter().map(|p| p * n as f64).collect();
        let center = radius as usize;
        let mut lo = center;
        while lo > 0 && expected[..lo].iter().sum::<f64>() >= 5.0 && expected[lo - 1] >= 5.0 {
            lo -= 1;
        }
        let mut hi = center;
        while hi + 1 < pmf.len() && expected[hi + 1..].iter().sum::<f64>() >= 5.0 && expected[hi + 1] >= 5.0 {
            hi += 1;
        }
        let mut bins: Vec<(f64, f64)> = vec![(
            expected[..lo].iter().sum(),
            counts[..lo].iter().sum::<u64>() as f64,
        )];
        bins.extend((lo..=hi).map(|j| (expected[j], counts[j] as f64)));
        bins.push((expected[hi + 1..].iter().sum(), counts[hi + 1..].iter().sum::<u64>() as f64));
        let bins: Vec<(f64, f64)> = bins.into_iter().filter(|(e, _)| *e > 0.0).collect();
        let stat: f64 = bins.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
        let p = 1.0 - ChiSquared::new((bins.len() - 1) as f64).unwrap().cdf(stat);
        ensure(p > 0.001, || format!("σ²={sigma2}: chi-square {stat:.2}, p = {p:.2e}"))?;
        details.push(format!("σ²={sigma2} p={p:.3}"));
    }
    Ok(details.join(", "))
}

fn cli_determinism() -> Check {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let _ = std::fs::remove_dir_all(dir);
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let f = |n: &str| dir.join(n).to_str().unwrap().to_string();
        let steps: Vec<Vec<String>> = vec![
            vec!["generate".into(), "--spec".into(), "toy".into(), "--seed".into(), "8".into(), "--out".into(), f("tree.ndjson")],
            vec!["measure".into(), "--spec".into(), "toy".into(), "--tree".into(), f("tree.ndjson"), "--seed".into(), "1".into(), "--out".into(), f("nmf.ndjson")],
            vec!["solve".into(), "--spec".into(), "toy".into(), "--tree".into(), f("tree.ndjson"), "--nmf".into(), f("nmf.ndjson"), "--algo".into(), "blue".into(), "--out".into(), f("blue.ndjson")],
            vec!["solve".into(), "--spec".into(), "toy".into(), "--tree".into(), f("tree.ndjson"), "--nmf".into(), f("nmf.ndjson"), "--algo".into(), "bluedown".into(), "--out".into(), f("bluedown.ndjson")],
            vec!["evaluate".into(), "--spec".into(), "toy".into(), "--tree".into(), f("tree.ndjson"), "--replicates".into(), "2".into(), "--metrics".into(), f("metrics.csv")],
        ];
        for args in steps {
            let out = Command::new(env!("CARGO_BIN_EXE_hierblue")).args(&args).output().map_err(|e| e.to_string())?;
            ensure(out.status.success(), || format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr)))?;
        }
        let mut files = Vec::new();
        for name in ["tree.ndjson", "nmf.ndjson", "blue.ndjson", "bluedown.ndjson", "metrics.csv"] {
            files.push((name.to_string(), std::fs::read(dir.join(name)).map_err(|e| e.to_string())?));
        }
        Ok(files)
    };
    let base = std::env::temp_dir().join(format!("hierblue-acceptance-{}", std::process::id()));
    let a = run(&base.join("a"))?;
    let b = run(&base.join("b"))?;
    let _ = std::fs::remove_dir_all(&base);
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure(x == y, || format!("{name} differs"))?;
    }
    Ok(format!("{} files identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("oracle equivalence", oracle_equivalence, Duration::from_secs(30)),
        ("succinct algebra suite", succinct_suite, Duration::from_secs(10)),
        ("combine correctness", combine_correctness, Duration::from_secs(60)),
        ("unbiasedness and variance", unbiasedness, Duration::from_secs(300)),
        ("feasibility of integer outputs", feasibility, Duration::from_secs(300)),
        ("integer-stage optimality", integer_optimality, Duration::from_secs(300)),
        ("equivalence under inactive constraints", equivalence, Duration::from_secs(300)),
        ("qualitative improvement over baseline", qualitative, Duration::from_secs(300)),
        ("discrete Gaussian sampler", sampler, Duration::from_secs(5)),
        ("end-to-end determinism", cli_determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let result = result.and_then(|msg| {
            if took > budget {
                Err(format!("{msg}; took {took:.1?}, budget {budget:?}"))
            } else {
                Ok(msg)
            }
        });
        match result {
            Ok(msg) => println!("PASS  {name}: {msg} [{took:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{took:.2?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
