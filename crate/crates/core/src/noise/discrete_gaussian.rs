//! Exact sampling from the discrete Gaussian over the integers.
//!
//! All acceptance probabilities are evaluated on exact rationals drawn from
//! uniform integers, so the output distribution carries no floating-point bias.
//! The variance is taken as the exact binary rational its `f64` represents.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;

/// A nonnegative rational `num / den`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Ratio {
    num: BigUint,
    den: BigUint,
}

impl Ratio {
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite() && x >= 0.0, "rational from {x}");
        if x == 0.0 {
            return Ratio {
                num: BigUint::zero(),
                den: BigUint::one(),
            };
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let mant = BigUint::from(mant);
        if exp >= 0 {
            Ratio {
                num: mant << exp as usize,
                den: BigUint::one(),
            }
        } else {
            Ratio {
                num: mant,
                den: BigUint::one() << (-exp) as usize,
            }
        }
    }
}

/// Uniform integer in `[0, bound)` by rejection on the minimal bit width.
fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero());
    if let Some(b) = bound.to_u64() {
        let bits = 64 - (b - 1).leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let v = rng.next_u64() & mask;
            if v < b {
                return BigUint::from(v);
            }
        }
    }
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let top = (bits - 32 * (words as u64 - 1)) as u32;
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.next_u32()).collect();
        if top < 32 {
            digits[words - 1] &= (1u32 << top) - 1;
        }
        let v = BigUint::new(digits);
        if &v < bound {
            return v;
        }
    }
}

fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, num: &BigUint, den: &BigUint) -> bool {
    if num >= den {
        return true;
    }
    if num.is_zero() {
        return false;
    }
    &uniform_below(rng, den) < num
}

/// Bernoulli with success probability `exp(-num/den)`.
fn bernoulli_exp<R: RngCore + ?Sized>(rng: &mut R, num: &BigUint, den: &BigUint) -> bool {
    if num <= den {
        // Count consecutive successes of Bernoulli(γ/k); odd stopping index wins.
        let mut k = BigUint::one();
        loop {
            if !bernoulli(rng, num, &(den * &k)) {
                break;
            }
            k += 1u32;
        }
        return (k & BigUint::one()).is_one();
    }
    let whole = num / den;
    let one = BigUint::one();
    let mut i = BigUint::zero();
    while i < whole {
        if !bernoulli_exp(rng, &one, &one) {
            return false;
        }
        i += 1u32;
    }
    let rest = num - &whole * den;
    bernoulli_exp(rng, &rest, den)
}

/// Discrete Laplace with scale `t`: `Pr[Y = y] ∝ exp(-|y|/t)`.
fn discrete_laplace<R: RngCore + ?Sized>(rng: &mut R, t: &BigUint) -> SignedDraw {
    let one = BigUint::one();
    loop {
        let u = uniform_below(rng, t);
        if !bernoulli_exp(rng, &u, t) {
            continue;
        }
        let mut v = BigUint::zero();
        while bernoulli_exp(rng, &one, &one) {
            v += 1u32;
        }
        let negative = rng.next_u32() & 1 == 1;
        if negative && u.is_zero() && v.is_zero() {
            continue;
        }
        return SignedDraw {
            negative,
            magnitude: u + t * v,
        };
    }
}

struct SignedDraw {
    negative: bool,
    magnitude: BigUint,
}

/// Largest `m` with `m² · den ≤ num`.
fn floor_sqrt(num: &BigUint, den: &BigUint) -> BigUint {
    let q = num / den;
    let mut m = q.sqrt();
    while (&m + 1u32) * (&m + 1u32) * den <= *num {
        m += 1u32;
    }
    while &m * &m * den > *num {
        m -= 1u32;
    }
    m
}

/// Draw `X` with `Pr[X = x] ∝ exp(-(x - mu)² / (2 sigma2))`.
pub fn sample_discrete_gaussian<R: RngCore + ?Sized>(mu: i64, sigma2: f64, rng: &mut R) -> i64 {
    assert!(sigma2 > 0.0 && sigma2.is_finite(), "variance must be positive, got {sigma2}");
    let Ratio { num: a, den: b } = Ratio::from_f64(sigma2);
    let t = floor_sqrt(&a, &b) + 1u32;
    // Accept Y with probability exp(-(|Y| - σ²/t)² / (2σ²)) = exp(-(|Y|bt - a)² / (2abt²)).
    let den = BigUint::from(2u32) * &a * &b * &t * &t;
    loop {
        let y = discrete_laplace(rng, &t);
        let ybt = &y.magnitude * &b * &t;
        let diff = if ybt >= a { &ybt - &a } else { &a - &ybt };
        let num = &diff * &diff;
        if bernoulli_exp(rng, &num, &den) {
            let m = y.magnitude.to_i64().expect("sample fits in i64");
            return if y.negative { mu - m } else { mu + m };
        }
    }
}

/// `Pr[X = mu + x]` for `|x| ≤ radius`, normalized over that window.
pub fn discrete_gaussian_pmf(sigma2: f64, radius: i64) -> Vec<f64> {
    let w: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma2)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}
