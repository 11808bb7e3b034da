//! Exact Farey levels built by mediant insertion, the word orbit of the two
//! generating Möbius maps, and the lifted point sets carrying `log q` in the
//! fiber.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Default largest level that [`farey_level`] will build (2^24 + 1 fractions).
pub const DEFAULT_MAX_LEVEL: u32 = 24;

/// Largest level for which [`word_orbit`] enumerates all words.
pub const MAX_WORD_LEVEL: u32 = 16;

/// Largest level at which [`lift_level`] re-derives its points by walking the
/// lifted maps in floating point.
const WALK_CHECK_LEVEL: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FareyError {
    #[error("{a} and {b} are not adjacent (|pq' - p'q| != 1)")]
    NotAdjacent { a: Rational, b: Rational },
    #[error("level {level} exceeds the configured maximum {max}")]
    LevelTooLarge { level: u32, max: u32 },
    #[error("fiber modulus requires r > 1, got {0}")]
    BadModulus(f64),
    #[error("cannot parse rational from {0:?}")]
    Parse(String),
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("walk lift disagrees with (p/q, log q) by {0:e}")]
    WalkMismatch(f64),
}

/// Reduced fraction with arbitrary-precision numerator and denominator.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rational(BigRational);

impl Rational {
    pub fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Result<Self, FareyError> {
        let den = den.into();
        if den.is_zero() {
            return Err(FareyError::ZeroDenominator);
        }
        Ok(Rational(BigRational::new(num.into(), den)))
    }

    /// Builds from parts already known to be coprime with positive denominator.
    pub(crate) fn from_coprime(num: BigInt, den: BigInt) -> Self {
        debug_assert!(den.is_positive());
        Rational(BigRational::new_raw(num, den))
    }

    pub fn from_integer(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn num(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn den(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }

    pub fn from_big(r: BigRational) -> Self {
        Rational(r)
    }

    pub fn to_f64(&self) -> f64 {
        let (n, d) = (self.num(), self.den());
        match (n.to_f64(), d.to_f64()) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => a / b,
            _ => self.0.to_f64().unwrap_or(f64::NAN),
        }
    }

    /// Natural log of the denominator, accurate for any size.
    pub fn log_den(&self) -> f64 {
        log_bigint(self.den())
    }

    pub fn is_in_unit_interval(&self) -> bool {
        !self.num().is_negative() && self.num() <= self.den()
    }

    /// `|p q' - p' q|`, which is 1 exactly when the two fractions are Farey neighbours.
    pub fn cross(&self, other: &Rational) -> BigInt {
        (self.num() * other.den() - other.num() * self.den()).abs()
    }

    pub fn is_adjacent(&self, other: &Rational) -> bool {
        self.cross(other).is_one()
    }
}

/// `ln n` for a positive big integer, shifting off low bits when `n` does not fit a double.
pub(crate) fn log_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 1000 {
        n.to_f64().map(f64::ln).unwrap_or(f64::NAN)
    } else {
        let shift = bits - 64;
        let top: BigInt = n >> shift;
        top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num(), self.den())
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = FareyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FareyError::Parse(s.to_string());
        let s = s.trim();
        match s.split_once('/') {
            Some((p, q)) => {
                let p: BigInt = p.trim().parse().map_err(|_| bad())?;
                let q: BigInt = q.trim().parse().map_err(|_| bad())?;
                Rational::new(p, q)
            }
            None => {
                let p: BigInt = s.parse().map_err(|_| bad())?;
                Rational::new(p, 1)
            }
        }
    }
}

/// `(p+p')/(q+q')` for adjacent fractions.
pub fn mediant(a: &Rational, b: &Rational) -> Result<Rational, FareyError> {
    if !a.is_adjacent(b) {
        return Err(FareyError::NotAdjacent { a: a.clone(), b: b.clone() });
    }
    Ok(Rational::from_coprime(a.num() + b.num(), a.den() + b.den()))
}

/// The ordered fractions of one mediant level.
#[derive(Clone, Debug, PartialEq)]
pub struct FareyLevel {
    level: u32,
    fractions: Vec<Rational>,
}

impl FareyLevel {
    pub fn base() -> Self {
        FareyLevel { level: 0, fractions: vec![Rational::zero(), Rational::one()] }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn fractions(&self) -> &[Rational] {
        &self.fractions
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    /// The level without its left endpoint 0, i.e. the points reached by words.
    pub fn starred(&self) -> &[Rational] {
        &self.fractions[1..]
    }

    /// Checks the level invariants exactly; returns the first offending index.
    pub fn validate(&self) -> Result<(), usize> {
        let f = &self.fractions;
        if f.len() != (1usize << self.level) + 1 {
            return Err(0);
        }
        if f[0] != Rational::zero() || f[f.len() - 1] != Rational::one() {
            return Err(0);
        }
        for (i, w) in f.windows(2).enumerate() {
            if w[0] >= w[1] || !w[0].is_adjacent(&w[1]) {
                return Err(i);
            }
        }
        Ok(())
    }
}

/// Inserts one mediant into every gap.
pub fn next_level(f: &FareyLevel) -> FareyLevel {
    let old = &f.fractions;
    let mut out = Vec::with_capacity(2 * old.len() - 1);
    for w in old.windows(2) {
        out.push(w[0].clone());
        // Consecutive elements of a level are adjacent by induction.
        out.push(Rational::from_coprime(w[0].num() + w[1].num(), w[0].den() + w[1].den()));
    }
    out.push(old[old.len() - 1].clone());
    let next = FareyLevel { level: f.level + 1, fractions: out };
    debug_assert!(next.validate().is_ok());
    next
}

pub fn farey_level(n: u32) -> Result<FareyLevel, FareyError> {
    farey_level_capped(n, DEFAULT_MAX_LEVEL)
}

pub fn farey_level_capped(n: u32, max: u32) -> Result<FareyLevel, FareyError> {
    if n > max {
        return Err(FareyError::LevelTooLarge { level: n, max });
    }
    let mut f = FareyLevel::base();
    for _ in 0..n {
        f = next_level(&f);
    }
    Ok(f)
}

/// Projective action of `[[1,0],[1,1]]`, i.e. `x -> x/(1+x)`, on `p/q`.
fn act_a(p: &BigInt, q: &BigInt) -> (BigInt, BigInt) {
    (p.clone(), p + q)
}

/// Projective action of `[[0,1],[-1,2]]`, i.e. `x -> 1/(2-x)`, on `p/q`.
fn act_b(p: &BigInt, q: &BigInt) -> (BigInt, BigInt) {
    (q.clone(), 2 * q - p)
}

/// Every image of 1 under a word of length `n` in the two generators.
pub fn word_orbit(n: u32) -> Result<BTreeSet<Rational>, FareyError> {
    if n > MAX_WORD_LEVEL {
        return Err(FareyError::LevelTooLarge { level: n, max: MAX_WORD_LEVEL });
    }
    let mut frontier = vec![(BigInt::one(), BigInt::one())];
    for _ in 0..n {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (p, q) in &frontier {
            next.push(act_a(p, q));
            next.push(act_b(p, q));
        }
        frontier = next;
    }
    Ok(frontier.into_iter().map(|(p, q)| Rational::new(p, q).expect("q > 0")).collect())
}

/// A level's starred points with fiber coordinate `log q mod log r`.
#[derive(Clone, Debug)]
pub struct LiftedFareySet {
    pub level: u32,
    pub modulus: f64,
    pub points: Vec<(Rational, f64)>,
}

impl LiftedFareySet {
    /// Points as `(x, omega)` doubles.
    pub fn as_f64(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|(x, w)| (x.to_f64(), *w))
    }
}

pub(crate) fn fiber_modulus(r: f64) -> Result<f64, FareyError> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(FareyError::BadModulus(r));
    }
    Ok(r.ln())
}

pub fn lift_level(n: u32, r: f64) -> Result<LiftedFareySet, FareyError> {
    let modulus = fiber_modulus(r)?;
    let check = n.min(WALK_CHECK_LEVEL);
    let err = walk_lift_discrepancy(check, r)?;
    if err > 1e-12 {
        return Err(FareyError::WalkMismatch(err));
    }
    let level = farey_level(n)?;
    let points = level
        .starred()
        .iter()
        .map(|x| (x.clone(), x.log_den().rem_euclid(modulus)))
        .collect();
    Ok(LiftedFareySet { level: n, modulus, points })
}

/// Support of the `n`-step lifted random walk started at `(1, 0)`, in floating point.
pub fn walk_lift(n: u32, r: f64) -> Result<Vec<(f64, f64)>, FareyError> {
    if n > MAX_WORD_LEVEL {
        return Err(FareyError::LevelTooLarge { level: n, max: MAX_WORD_LEVEL });
    }
    let modulus = fiber_modulus(r)?;
    let mut pts = vec![(1.0f64, 0.0f64)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(pts.len() * 2);
        for &(x, w) in &pts {
            next.push((x / (1.0 + x), (w + (1.0 + x).ln()).rem_euclid(modulus)));
            next.push((1.0 / (2.0 - x), (w + (2.0 - x).ln()).rem_euclid(modulus)));
        }
        pts = next;
    }
    Ok(pts)
}

/// Largest gap between the walk lift and the exact `(p/q, log q)` description
/// at level `n`, with fiber distances measured on the circle.
pub fn walk_lift_discrepancy(n: u32, r: f64) -> Result<f64, FareyError> {
    let modulus = fiber_modulus(r)?;
    let mut walk = walk_lift(n, r)?;
    walk.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let level = farey_level(n)?;
    let exact = level.starred();
    if exact.len() != walk.len() {
        return Ok(f64::INFINITY);
    }
    let mut worst = 0.0f64;
    for ((x, w), e) in walk.iter().zip(exact) {
        let dw = (w - e.log_den()).rem_euclid(modulus);
        let dw = dw.min(modulus - dw);
        worst = worst.max((x - e.to_f64()).abs()).max(dw);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn mediant_examples() {
        assert_eq!(mediant(&q("0/1"), &q("1/1")).unwrap(), q("1/2"));
        assert_eq!(mediant(&q("1/3"), &q("1/2")).unwrap(), q("2/5"));
        assert_eq!(mediant(&q("1/2"), &q("1/1")).unwrap(), q("2/3"));
    }

    #[test]
    fn mediant_rejects_non_adjacent() {
        assert!(matches!(mediant(&q("0/1"), &q("2/3")), Err(FareyError::NotAdjacent { .. })));
    }

    #[test]
    fn small_levels() {
        let f1 = next_level(&FareyLevel::base());
        assert_eq!(f1.fractions(), &[q("0"), q("1/2"), q("1")]);
        let f2 = farey_level(2).unwrap();
        assert_eq!(f2.fractions(), &[q("0"), q("1/3"), q("1/2"), q("2/3"), q("1")]);
        assert_eq!(farey_level(0).unwrap().len(), 2);
        assert_eq!(farey_level(10).unwrap().len(), 1025);
        assert_eq!(next_level(&f2).len(), 2 * f2.len() - 1);
    }

    #[test]
    fn level_cap_is_enforced() {
        assert_eq!(farey_level(25), Err(FareyError::LevelTooLarge { level: 25, max: 24 }));
        assert!(farey_level_capped(3, 2).is_err());
    }

    #[test]
    fn word_orbit_small() {
        let w1: Vec<_> = word_orbit(1).unwrap().into_iter().collect();
        assert_eq!(w1, vec![q("1/2"), q("1")]);
        let w2: Vec<_> = word_orbit(2).unwrap().into_iter().collect();
        assert_eq!(w2, vec![q("1/3"), q("1/2"), q("2/3"), q("1")]);
    }

    #[test]
    fn word_orbit_matches_level() {
        for n in 0..=12 {
            let w: Vec<_> = word_orbit(n).unwrap().into_iter().collect();
            assert_eq!(w.as_slice(), farey_level(n).unwrap().starred(), "n={n}");
        }
    }

    #[test]
    fn small_denominators_appear_by_level_12() {
        let f = farey_level(12).unwrap();
        let set: BTreeSet<_> = f.fractions().iter().cloned().collect();
        for den in 1..=12i64 {
            for num in 1..=den {
                assert!(set.contains(&Rational::new(num, den).unwrap()), "{num}/{den}");
            }
        }
    }

    #[test]
    fn lift_examples() {
        let l1 = lift_level(1, 2.0).unwrap();
        assert_eq!(l1.points.len(), 2);
        assert_eq!(l1.points[0].0, q("1/2"));
        assert!(l1.points[0].1.abs() < 1e-15 || (l1.points[0].1 - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l1.points[1], (q("1"), 0.0));
        let l2 = lift_level(2, 2.0).unwrap();
        let (_, w) = l2.points.iter().find(|(x, _)| *x == q("1/3")).unwrap();
        assert!((w - 0.405_465_108_108_164_4).abs() < 1e-12);
    }

    #[test]
    fn walk_agrees_with_denominators() {
        for n in 0..=10 {
            for r in [2.0, 3.5] {
                assert!(walk_lift_discrepancy(n, r).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_modulus() {
        assert!(lift_level(2, 1.0).is_err());
    }

    #[test]
    fn log_of_huge_denominator() {
        let big = BigInt::one() << 2000u32;
        assert!((log_bigint(&big) - 2000.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }
}
