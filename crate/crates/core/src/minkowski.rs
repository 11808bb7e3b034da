//! Minkowski's question-mark function, its inverse, and equal-mass quadrature
//! for the measure `mu = d?` and its restriction to `Y = (1/3, 1/2)`.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::rational::{farey_level, FareyError, Rational};

/// Default target accuracy in mass coordinate for [`question_mark_inverse`].
pub const DEFAULT_TOL: f64 = 1e-14;

/// Mass bisection never needs more steps than an `f64` has mantissa bits.
const MAX_BISECTIONS: u32 = 60;

/// Tolerance used when placing quadrature nodes.
const NODE_TOL: f64 = 1e-16;

/// Mass coordinates of the ends of `Y`: `?(1/3) = 1/4`, `?(1/2) = 1/2`.
pub const Y_MASS: (f64, f64) = (0.25, 0.5);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinkowskiError {
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("argument {0} outside [0, 1]")]
    OutOfRange(String),
    #[error("empty interval [{0}, {1}]")]
    EmptyInterval(String, String),
    #[error("node count must be at least 1")]
    NoNodes,
    #[error("correspondence fails at level {level}, index {index}")]
    Correspondence { level: u32, index: usize },
    #[error(transparent)]
    Farey(#[from] FareyError),
}

/// `numerator / 2^exponent`, kept with odd numerator (or zero with exponent 0).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DyadicRational {
    numerator: BigInt,
    exponent: u64,
}

impl DyadicRational {
    pub fn new(numerator: impl Into<BigInt>, exponent: u64) -> Self {
        let mut numerator = numerator.into();
        let mut exponent = exponent;
        if numerator.is_zero() {
            return DyadicRational { numerator, exponent: 0 };
        }
        let tz = numerator.trailing_zeros().unwrap_or(0).min(exponent);
        numerator >>= tz;
        exponent -= tz;
        DyadicRational { numerator, exponent }
    }

    pub fn zero() -> Self {
        DyadicRational::new(0, 0)
    }

    pub fn one() -> Self {
        DyadicRational::new(1, 0)
    }

    pub fn numerator(&self) -> &BigInt {
        &self.numerator
    }

    pub fn exponent(&self) -> u64 {
        self.exponent
    }

    fn aligned(&self, other: &Self) -> (BigInt, BigInt, u64) {
        let e = self.exponent.max(other.exponent);
        (
            &self.numerator << (e - self.exponent),
            &other.numerator << (e - other.exponent),
            e,
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        let (a, b, e) = self.aligned(other);
        DyadicRational::new(a + b, e)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let (a, b, e) = self.aligned(other);
        DyadicRational::new(a - b, e)
    }

    pub fn mul(&self, other: &Self) -> Self {
        DyadicRational::new(&self.numerator * &other.numerator, self.exponent + other.exponent)
    }

    /// The exact value of a finite nonnegative `f64`.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() || x < 0.0 {
            return None;
        }
        if x == 0.0 {
            return Some(DyadicRational::zero());
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        Some(if e >= 0 {
            DyadicRational::new(BigInt::from(mant) << e as u64, 0)
        } else {
            DyadicRational::new(mant, (-e) as u64)
        })
    }

    pub fn to_rational(&self) -> Rational {
        Rational::new(self.numerator.clone(), BigInt::one() << self.exponent).expect("nonzero")
    }

    pub fn to_f64(&self) -> f64 {
        let (m, e) = self.split();
        // two factors so a large mantissa does not underflow before scaling
        m * 2f64.powf((e / 2) as f64) * 2f64.powf((e - e / 2) as f64)
    }

    /// `(m, e)` with `self = m 2^e` and `|m|` below `2^64`.
    fn split(&self) -> (f64, i64) {
        let shift = self.numerator.bits().saturating_sub(64);
        let top: BigInt = &self.numerator >> shift;
        (top.to_f64().unwrap(), shift as i64 - self.exponent as i64)
    }

    /// `self / other` in floating point, without forming either value; both
    /// may lie far below the `f64` range.
    pub fn ratio(&self, other: &Self) -> f64 {
        let (m1, e1) = self.split();
        let (m2, e2) = other.split();
        m1 / m2 * 2f64.powf((e1 - e2) as f64)
    }
}

impl PartialOrd for DyadicRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DyadicRational {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }
}

impl fmt::Display for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.numerator, self.exponent)
    }
}

impl fmt::Debug for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Partial quotients `a_1, a_2, ...` of `x = [0; a_1, a_2, ...]` for `0 < x <= 1`.
fn partial_quotients(x: &Rational) -> Vec<BigInt> {
    let (mut p, mut q) = (x.num().clone(), x.den().clone());
    // x = p/q = 1/(q/p): the first quotient is floor(q/p).
    let mut out = Vec::new();
    while !p.is_zero() {
        let (a, r) = q.div_rem(&p);
        out.push(a);
        q = p;
        p = r;
    }
    out
}

/// Exact `?(x)` from the alternating dyadic series over the continued fraction.
pub fn question_mark(x: &Rational) -> Result<DyadicRational, MinkowskiError> {
    if !x.is_in_unit_interval() {
        return Err(MinkowskiError::OutOfRange(x.to_string()));
    }
    if x.num().is_zero() {
        return Ok(DyadicRational::zero());
    }
    let quotients = partial_quotients(x);
    let partial: Vec<u64> = quotients
        .iter()
        .scan(0u64, |s, a| {
            *s += a.to_u64().expect("partial quotient fits u64");
            Some(*s)
        })
        .collect();
    let total = *partial.last().unwrap();
    // ?(x) = sum_k (-1)^{k+1} 2^{1 - s_k}, over the common denominator 2^total.
    let mut num = BigInt::zero();
    for (k, &s) in partial.iter().enumerate() {
        let term = BigInt::one() << (total - s + 1);
        if k % 2 == 0 {
            num += term;
        } else {
            num -= term;
        }
    }
    Ok(DyadicRational::new(num, total))
}

/// Checks `?` against the rank of each point in the level-`n` Farey set.
pub fn farey_dyadic_correspondence_check(n: u32) -> Result<(), MinkowskiError> {
    let level = farey_level(n)?;
    for (j, x) in level.fractions().iter().enumerate() {
        if question_mark(x)? != DyadicRational::new(j, n as u64) {
            return Err(MinkowskiError::Correspondence { level: n, index: j });
        }
    }
    Ok(())
}

/// `mu([a, b]) = ?(b) - ?(a)`.
pub fn mu_mass(a: &Rational, b: &Rational) -> Result<DyadicRational, MinkowskiError> {
    if a >= b {
        return Err(MinkowskiError::EmptyInterval(a.to_string(), b.to_string()));
    }
    Ok(question_mark(b)?.sub(&question_mark(a)?))
}

/// Stern–Brocot bisection in mass coordinate. Returns the numerator and
/// denominator of the final mediant.
fn bisect_mass(u: f64, tol: f64) -> (u64, u64) {
    let (mut lp, mut lq, mut rp, mut rq) = (0u64, 1u64, 1u64, 1u64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if u <= 0.0 {
        return (0, 1);
    }
    if u >= 1.0 {
        return (1, 1);
    }
    for _ in 0..MAX_BISECTIONS {
        let (mp, mq) = (lp + rp, lq + rq);
        let mid = 0.5 * (lo + hi);
        if u == mid {
            return (mp, mq);
        }
        if u < mid {
            rp = mp;
            rq = mq;
            hi = mid;
        } else {
            lp = mp;
            lq = mq;
            lo = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    (lp + rp, lq + rq)
}

/// `x` with `|?(x) - u| <= tol`, found on the Stern–Brocot tree. Dyadic `u`
/// reached during bisection map to the exact rational.
pub fn question_mark_inverse(u: f64, tol: f64) -> Result<f64, MinkowskiError> {
    if !(tol > 0.0) {
        return Err(MinkowskiError::BadTolerance(tol));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(MinkowskiError::OutOfRange(u.to_string()));
    }
    let (p, q) = bisect_mass(u, tol);
    Ok(p as f64 / q as f64)
}

/// Rational form of [`question_mark_inverse`].
pub fn question_mark_inverse_rational(u: f64, tol: f64) -> Result<Rational, MinkowskiError> {
    if !(tol > 0.0) {
        return Err(MinkowskiError::BadTolerance(tol));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(MinkowskiError::OutOfRange(u.to_string()));
    }
    let (p, q) = bisect_mass(u, tol);
    Ok(Rational::new(p, q)?)
}

/// Floating-point `?(x)` by descending the Stern–Brocot tree.
pub fn question_mark_f64(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let (mut lp, mut lq, mut rp, mut rq) = (0u64, 1u64, 1u64, 1u64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..MAX_BISECTIONS {
        let (mp, mq) = (lp + rp, lq + rq);
        let mid = 0.5 * (lo + hi);
        let lhs = x * mq as f64;
        let rhs = mp as f64;
        if lhs == rhs {
            return mid;
        }
        if lhs < rhs {
            rp = mp;
            rq = mq;
            hi = mid;
        } else {
            lp = mp;
            lq = mq;
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equal-mass midpoint nodes on a mass interval, with uniform weights.
#[derive(Clone, Debug)]
pub struct MeasureNodeSet {
    /// Endpoints in the x coordinate.
    pub interval: (f64, f64),
    /// Endpoints in the mass coordinate.
    pub mass_interval: (f64, f64),
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MeasureNodeSet {
    /// Nodes `?^{-1}` of the cell midpoints of `[ua, ub]` cut into `count` cells.
    pub fn on_mass_interval(ua: f64, ub: f64, count: usize) -> Result<Self, MinkowskiError> {
        if count == 0 {
            return Err(MinkowskiError::NoNodes);
        }
        if !(0.0 <= ua && ua < ub && ub <= 1.0) {
            return Err(MinkowskiError::EmptyInterval(ua.to_string(), ub.to_string()));
        }
        let width = ub - ua;
        let nodes = (0..count)
            .map(|m| {
                let u = ua + (m as f64 + 0.5) / count as f64 * width;
                question_mark_inverse(u, NODE_TOL)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let interval = (question_mark_inverse(ua, NODE_TOL)?, question_mark_inverse(ub, NODE_TOL)?);
        Ok(MeasureNodeSet {
            interval,
            mass_interval: (ua, ub),
            nodes,
            weights: vec![1.0 / count as f64; count],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Normalized integral: the mean of `f` under the restricted measure.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Nodes for `mu_Y`, the normalized restriction of `mu` to `Y`.
pub fn mu_y_nodes(count: usize) -> Result<MeasureNodeSet, MinkowskiError> {
    MeasureNodeSet::on_mass_interval(Y_MASS.0, Y_MASS.1, count)
}

/// Mean of `f` under the normalized restriction of `mu` to the mass interval
/// `[ua, ub]`. The midpoint rule in mass coordinate has error proportional to
/// the cell count's inverse, so the results at `count` and `count/2` are
/// combined by one Richardson step.
pub fn integrate_mass_extrapolated(
    ua: f64,
    ub: f64,
    count: usize,
    f: impl Fn(f64) -> f64,
) -> Result<f64, MinkowskiError> {
    let fine = MeasureNodeSet::on_mass_interval(ua, ub, count.max(2))?.integrate(&f);
    let coarse = MeasureNodeSet::on_mass_interval(ua, ub, count.max(2) / 2)?.integrate(&f);
    Ok(2.0 * fine - coarse)
}

/// Extrapolated `mu_Y` mean of `f`.
pub fn integrate_mu_y(count: usize, f: impl Fn(f64) -> f64) -> Result<f64, MinkowskiError> {
    integrate_mass_extrapolated(Y_MASS.0, Y_MASS.1, count, f)
}
