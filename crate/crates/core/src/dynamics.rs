//! The Farey map, its skew-product extension, and the first-return map to
//! `Y = (1/3, 1/2)` with its full-branch partition.

use std::sync::OnceLock;

use num_bigint::BigInt;
use thiserror::Error;

use crate::rational::{fiber_modulus, FareyError, Rational};

pub const Y_LO: f64 = 1.0 / 3.0;
pub const Y_HI: f64 = 0.5;

/// Longest itinerary followed before a point is declared non-returning.
pub const RETURN_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("{0} is not in Y = (1/3, 1/2)")]
    NotInY(f64),
    #[error("no return to Y within {steps} steps from {x} (boundary point?)")]
    NonReturn { x: f64, steps: usize },
    #[error("itinerary of {x} does not have the branch shape")]
    Itinerary { x: f64 },
    #[error("branch word ({i},{j}) fails the round trip at y={y}: error {err:e}")]
    BranchWord { i: u32, j: u32, y: f64, err: f64 },
    #[error("branch index needs i >= 1, got ({0},{1})")]
    BadBranch(u32, u32),
    #[error(transparent)]
    Farey(#[from] FareyError),
}

pub fn h_a(x: f64) -> f64 {
    x / (1.0 + x)
}

pub fn h_b(x: f64) -> f64 {
    1.0 / (2.0 - x)
}

/// `T(x) = x/(1-x)` on `[0, 1/2)`, `2 - 1/x` on `[1/2, 1]`.
pub fn farey_map(x: f64) -> f64 {
    if x < 0.5 {
        x / (1.0 - x)
    } else {
        2.0 - 1.0 / x
    }
}

/// Fiber increment: `log(1-x)` left of 1/2, `log x` from 1/2 on.
pub fn phi(x: f64) -> Result<f64, DynamicsError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(DynamicsError::OutOfDomain(x));
    }
    Ok(phi_unchecked(x))
}

#[inline]
pub(crate) fn phi_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        (-x).ln_1p()
    } else {
        x.ln()
    }
}

/// A point of `[0,1] x R/(log r)Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkewPoint {
    pub x: f64,
    pub omega: f64,
    pub modulus: f64,
}

impl SkewPoint {
    pub fn new(x: f64, omega: f64, r: f64) -> Result<Self, DynamicsError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(DynamicsError::OutOfDomain(x));
        }
        let modulus = fiber_modulus(r)?;
        Ok(SkewPoint { x, omega: wrap(omega, modulus), modulus })
    }

    pub(crate) fn with_modulus(x: f64, omega: f64, modulus: f64) -> Self {
        SkewPoint { x, omega: wrap(omega, modulus), modulus }
    }
}

/// Reduces into `[0, modulus)`, guarding the rounding case that lands on `modulus`.
#[inline]
pub fn wrap(omega: f64, modulus: f64) -> f64 {
    let w = omega.rem_euclid(modulus);
    if w >= modulus {
        0.0
    } else {
        w
    }
}

/// `(x, w) -> (T x, w + phi(x))`.
pub fn skew_step(p: SkewPoint) -> SkewPoint {
    SkewPoint::with_modulus(farey_map(p.x), p.omega + phi_unchecked(p.x), p.modulus)
}

/// Lift of `h_A`: `(x, w) -> (x/(1+x), w + log(1+x))`.
pub fn lift_a(p: SkewPoint) -> SkewPoint {
    SkewPoint::with_modulus(h_a(p.x), p.omega + p.x.ln_1p(), p.modulus)
}

/// Lift of `h_B`: `(x, w) -> (1/(2-x), w + log(2-x))`.
pub fn lift_b(p: SkewPoint) -> SkewPoint {
    SkewPoint::with_modulus(h_b(p.x), p.omega + (2.0 - p.x).ln(), p.modulus)
}

/// Integer 2x2 matrix acting by `x -> (ax+b)/(cx+d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mobius {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl Mobius {
    pub const IDENTITY: Mobius = Mobius { a: 1, b: 0, c: 0, d: 1 };
    /// Matrix of `h_A`.
    pub const A: Mobius = Mobius { a: 1, b: 0, c: 1, d: 1 };
    /// Matrix of `h_B`.
    pub const B: Mobius = Mobius { a: 0, b: 1, c: -1, d: 2 };

    pub fn compose(self, o: Mobius) -> Mobius {
        Mobius {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn pow(self, n: u32) -> Mobius {
        (0..n).fold(Mobius::IDENTITY, |m, _| m.compose(self))
    }

    pub fn det(self) -> i64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(self, x: f64) -> f64 {
        (self.a as f64 * x + self.b as f64) / (self.c as f64 * x + self.d as f64)
    }

    pub fn apply_exact(self, x: &Rational) -> Rational {
        let (p, q) = (x.num(), x.den());
        let num = BigInt::from(self.a) * p + BigInt::from(self.b) * q;
        let den = BigInt::from(self.c) * p + BigInt::from(self.d) * q;
        Rational::new(num, den).expect("denominator positive on [0,1]")
    }

    /// `cx + d`; for unimodular maps the derivative is its inverse square.
    pub fn denominator(self, x: f64) -> f64 {
        self.c as f64 * x + self.d as f64
    }

    pub fn derivative(self, x: f64) -> f64 {
        self.det() as f64 / self.denominator(x).powi(2)
    }
}

/// Index `(i, j)` of a branch of the return map: one step into `(1/2, 1)`,
/// `i` steps there in total, then `j` steps in `(0, 1/3]` before landing in `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct BranchIndex {
    pub i: u32,
    pub j: u32,
}

impl BranchIndex {
    pub fn new(i: u32, j: u32) -> Result<Self, DynamicsError> {
        if i == 0 {
            return Err(DynamicsError::BadBranch(i, j));
        }
        Ok(BranchIndex { i, j })
    }

    pub fn return_time(self) -> u32 {
        self.i + self.j + 1
    }

    /// Matrix of the inverse branch `h_A o h_B^i o h_A^j`.
    pub fn mobius(self) -> Mobius {
        Mobius::A.compose(Mobius::B.pow(self.i)).compose(Mobius::A.pow(self.j))
    }

    /// Exact endpoints of the branch interval, the images of 1/3 and 1/2.
    pub fn interval_exact(self) -> (Rational, Rational) {
        let m = self.mobius();
        let lo = m.apply_exact(&Rational::new(1, 3).unwrap());
        let hi = m.apply_exact(&Rational::new(1, 2).unwrap());
        (lo, hi)
    }

    /// All branches with return time in `[2, rmax]`, ordered by return time then `i`.
    pub fn up_to(rmax: u32) -> impl Iterator<Item = BranchIndex> {
        (2..=rmax).flat_map(|r| (1..r).map(move |i| BranchIndex { i, j: r - 1 - i }))
    }

    /// The `r - 1` branches of return time `r`.
    pub fn with_return_time(r: u32) -> impl Iterator<Item = BranchIndex> {
        (1..r.max(1)).map(move |i| BranchIndex { i, j: r - 1 - i })
    }

    /// Letters applied to `y`, innermost first.
    fn letters(self) -> impl Iterator<Item = Letter> {
        std::iter::repeat(Letter::A)
            .take(self.j as usize)
            .chain(std::iter::repeat(Letter::B).take(self.i as usize))
            .chain(std::iter::once(Letter::A))
    }
}

#[derive(Clone, Copy)]
enum Letter {
    A,
    B,
}

/// `h_A o h_B^i o h_A^j (y)`, the preimage of `y` in the branch.
pub fn inverse_branch(b: BranchIndex, y: f64) -> Result<f64, DynamicsError> {
    if !(Y_LO < y && y < Y_HI) {
        return Err(DynamicsError::NotInY(y));
    }
    ensure_branch_convention()?;
    Ok(inverse_branch_unchecked(b, y))
}

pub(crate) fn inverse_branch_unchecked(b: BranchIndex, y: f64) -> f64 {
    b.letters().fold(y, |x, l| match l {
        Letter::A => h_a(x),
        Letter::B => h_b(x),
    })
}

/// Orbit of `h(y)` up to its return, built backwards from `y` so every
/// point and every fiber increment carries full relative precision.
#[derive(Clone, Debug)]
pub struct BranchOrbit {
    /// `x_0 = h(y), x_1 = T x_0, ..., x_{r-1}`.
    pub points: Vec<f64>,
    /// `phi(x_m)` for each point.
    pub increments: Vec<f64>,
}

impl BranchOrbit {
    pub fn new(b: BranchIndex, y: f64) -> Self {
        let r = b.return_time() as usize;
        let mut points = vec![0.0; r];
        let mut increments = vec![0.0; r];
        let mut next = y;
        for (k, l) in b.letters().enumerate() {
            let m = r - 1 - k;
            let (x, inc) = match l {
                Letter::A => (h_a(next), -next.ln_1p()),
                Letter::B => (h_b(next), -(2.0 - next).ln()),
            };
            points[m] = x;
            increments[m] = inc;
            next = x;
        }
        BranchOrbit { points, increments }
    }

    /// Return-time sum of the fiber increments.
    pub fn phi_sum(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// Fiber offsets before each step: `0, phi(x_0), phi(x_0)+phi(x_1), ...`.
    pub fn partial_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.increments.iter().scan(0.0, |s, &inc| {
            let before = *s;
            *s += inc;
            Some(before)
        })
    }
}

/// Forward-iterates `x = h(y)` and checks it lands back on `y` along the
/// expected itinerary.
pub fn verify_branch_word(b: BranchIndex, y: f64) -> Result<f64, DynamicsError> {
    let x = inverse_branch_unchecked(b, y);
    let rec = return_data(x)?;
    let err = (rec.image - y).abs();
    // Forward iteration amplifies rounding by the branch expansion (cy+d)^2.
    let tol = 1e-12f64.max(64.0 * f64::EPSILON * b.mobius().denominator(y).powi(2));
    if rec.branch != b || rec.return_time != b.return_time() || err > tol {
        return Err(DynamicsError::BranchWord { i: b.i, j: b.j, y, err });
    }
    Ok(err)
}

/// Runs [`verify_branch_word`] once per process over all branches with
/// return time at most 20 and a spread of base points.
pub fn ensure_branch_convention() -> Result<(), DynamicsError> {
    static VERIFIED: OnceLock<Result<(), DynamicsError>> = OnceLock::new();
    VERIFIED
        .get_or_init(|| {
            for b in BranchIndex::up_to(20) {
                for k in 1..8 {
                    let y = Y_LO + (Y_HI - Y_LO) * k as f64 / 8.0;
                    verify_branch_word(b, y)?;
                }
            }
            Ok(())
        })
        .clone()
}

/// One application of the return map.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnRecord {
    pub branch: BranchIndex,
    pub image: f64,
    pub return_time: u32,
    pub phi_sum: f64,
    /// `x, T x, ..., T^{r-1} x`.
    pub itinerary: Vec<f64>,
}

fn in_y(x: f64) -> bool {
    Y_LO < x && x < Y_HI
}

/// Forward iteration of `T` from `x` in `Y` until the first return.
pub fn return_data(x: f64) -> Result<ReturnRecord, DynamicsError> {
    if !in_y(x) {
        return Err(DynamicsError::NotInY(x));
    }
    let mut itinerary = vec![x];
    let mut phi_sum = phi_unchecked(x);
    let mut z = farey_map(x);
    while !in_y(z) {
        if itinerary.len() >= RETURN_CAP {
            return Err(DynamicsError::NonReturn { x, steps: itinerary.len() });
        }
        itinerary.push(z);
        phi_sum += phi_unchecked(z);
        z = farey_map(z);
    }
    // Shape: x, then i points in [1/2, 1), then j points in (0, 1/3].
    let tail = &itinerary[1..];
    let i = tail.iter().take_while(|&&p| p >= 0.5).count();
    let j = tail.len() - i;
    if i == 0 || tail[i..].iter().any(|&p| p > Y_LO) {
        return Err(DynamicsError::Itinerary { x });
    }
    let branch = BranchIndex { i: i as u32, j: j as u32 };
    Ok(ReturnRecord {
        branch,
        image: z,
        return_time: branch.return_time(),
        phi_sum,
        itinerary,
    })
}

/// Return-map image `T_Y x`.
pub fn induced_map(x: f64) -> Result<f64, DynamicsError> {
    Ok(return_data(x)?.image)
}

/// Birkhoff sum of `psi` over one return, with the fiber coordinate advanced
/// along the way.
pub fn induced_psi(
    psi: impl Fn(f64, f64) -> f64,
    x: f64,
    omega: f64,
    modulus: f64,
) -> Result<f64, DynamicsError> {
    let rec = return_data(x)?;
    let mut w = omega;
    let mut total = 0.0;
    for &p in &rec.itinerary {
        total += psi(p, wrap(w, modulus));
        w += phi_unchecked(p);
    }
    Ok(total)
}

/// Induced observable at `h(y)` computed from the backward orbit; agrees with
/// [`induced_psi`] but stays accurate for long returns.
pub fn induced_psi_on_branch(
    psi: impl Fn(f64, f64) -> f64,
    orbit: &BranchOrbit,
    omega: f64,
    modulus: f64,
) -> f64 {
    orbit
        .points
        .iter()
        .zip(orbit.partial_sums())
        .map(|(&p, s)| psi(p, wrap(omega + s, modulus)))
        .sum()
}

/// Fixed point of the composition `h_{w_1} o ... o h_{w_k}`, i.e. the periodic
/// point of the return map visiting the branches in word order.
pub fn word_fixed_point(word: &[BranchIndex]) -> f64 {
    let mut y = 0.5 * (Y_LO + Y_HI);
    for _ in 0..200 {
        let next = word.iter().rev().fold(y, |acc, &b| inverse_branch_unchecked(b, acc));
        let done = (next - y).abs() < 1e-16;
        y = next;
        if done {
            break;
        }
    }
    y
}

/// A point of the level-`n` tower over `Y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TowerPoint {
    pub base: f64,
    pub height: u32,
}

/// Return time of the `n`-th iterate of the return map, and that iterate.
pub fn level_return(x: f64, level: u32) -> Result<(u32, f64), DynamicsError> {
    let mut total = 0;
    let mut y = x;
    for _ in 0..level.max(1) {
        let rec = return_data(y)?;
        total += rec.return_time;
        y = rec.image;
    }
    Ok((total, y))
}

/// Climbs one floor, or drops to the base over the image at the top floor.
pub fn tower_step(p: TowerPoint, level: u32) -> Result<TowerPoint, DynamicsError> {
    let (r, image) = level_return(p.base, level)?;
    if p.height + 1 < r {
        Ok(TowerPoint { base: p.base, height: p.height + 1 })
    } else {
        Ok(TowerPoint { base: image, height: 0 })
    }
}

/// `pi(x, i) = T^i x`.
pub fn tower_projection(p: TowerPoint) -> f64 {
    (0..p.height).fold(p.base, |x, _| farey_map(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> f64 {
        1.5 - 5f64.sqrt() / 2.0
    }

    #[test]
    fn farey_map_examples() {
        assert!((farey_map(1.0 / 3.0) - 0.5).abs() < 1e-15);
        assert_eq!(farey_map(0.5), 0.0);
        assert_eq!(farey_map(0.0), 0.0);
        assert_eq!(farey_map(1.0), 1.0);
        for k in 0..100 {
            let x = (k as f64 + 0.5) / 100.0;
            assert!((farey_map(h_a(x)) - x).abs() < 1e-14);
            assert!((farey_map(h_b(x)) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5).unwrap(), 0.5f64.ln());
        assert_eq!(phi(1.0).unwrap(), 0.0);
        assert!(phi(1.5).is_err());
        // continuous at 1/2 from the left
        assert!((phi(0.5 - 1e-12).unwrap() - 0.5f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn skew_step_example() {
        let p = SkewPoint::new(1.0 / 3.0, 0.0, 2.0).unwrap();
        let q = skew_step(p);
        assert!((q.x - 0.5).abs() < 1e-15);
        let expect = wrap((2.0f64 / 3.0).ln(), 2f64.ln());
        assert!((q.omega - expect).abs() < 1e-15);
    }

    #[test]
    fn fiber_stays_in_range() {
        let mut p = SkewPoint::new(0.3, 0.1, 2.0).unwrap();
        for _ in 0..10_000 {
            p = skew_step(p);
            assert!(p.omega >= 0.0 && p.omega < p.modulus);
        }
    }

    #[test]
    fn lifts_invert_skew_step() {
        let m = 3f64.ln();
        for k in 1..50 {
            let p = SkewPoint::with_modulus(k as f64 / 50.0, 0.02 * k as f64, m);
            for q in [lift_a(p), lift_b(p)] {
                let back = skew_step(q);
                assert!((back.x - p.x).abs() < 1e-12);
                let dw = (back.omega - p.omega).rem_euclid(m);
                assert!(dw.min(m - dw) < 1e-12);
            }
        }
    }

    #[test]
    fn branch_convention_holds() {
        ensure_branch_convention().unwrap();
    }

    #[test]
    fn branch_round_trip_long_returns() {
        for b in [BranchIndex { i: 1, j: 38 }, BranchIndex { i: 39, j: 0 }, BranchIndex { i: 20, j: 19 }] {
            let x = inverse_branch(b, 0.4).unwrap();
            let rec = return_data(x).unwrap();
            assert_eq!(rec.branch, b);
            assert!((rec.image - 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn golden_fixed_point_has_return_time_two() {
        let x = golden();
        let rec = return_data(x).unwrap();
        assert_eq!(rec.return_time, 2);
        assert_eq!(rec.branch, BranchIndex { i: 1, j: 0 });
        assert!((rec.image - x).abs() < 1e-14);
        let fixed = word_fixed_point(&[BranchIndex { i: 1, j: 0 }]);
        assert!((fixed - x).abs() < 1e-15);
        assert!((inverse_branch(BranchIndex { i: 1, j: 0 }, x).unwrap() - x).abs() < 1e-15);
    }

    #[test]
    fn second_fixed_point_has_return_time_three() {
        let x = 1.0 - 3f64.sqrt() / 3.0;
        let rec = return_data(x).unwrap();
        assert_eq!(rec.branch, BranchIndex { i: 2, j: 0 });
        assert!((rec.image - x).abs() < 1e-13);
        assert!((word_fixed_point(&[BranchIndex { i: 2, j: 0 }]) - x).abs() < 1e-15);
    }

    #[test]
    fn first_return_has_no_intermediate_visit() {
        for k in 1..200 {
            let x = Y_LO + (Y_HI - Y_LO) * (k as f64 + 0.37) / 200.0;
            let rec = return_data(x).unwrap();
            assert!(rec.itinerary[1..].iter().all(|&p| !in_y(p)));
            assert_eq!(rec.itinerary.len() as u32, rec.return_time);
        }
    }

    #[test]
    fn branch_contracts_and_derivative_matches() {
        for k in 1..50 {
            let y = Y_LO + (Y_HI - Y_LO) * k as f64 / 50.0;
            for b in BranchIndex::up_to(8) {
                let m = b.mobius();
                let h = 1e-6;
                let fd = (inverse_branch(b, y + h).unwrap() - inverse_branch(b, y - h).unwrap()) / (2.0 * h);
                assert!((fd - m.derivative(y)).abs() < 1e-7 * m.derivative(y).abs().max(1e-3));
                assert!(m.derivative(y).abs() < 1.0);
                assert!((m.apply(y) - inverse_branch(b, y).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_orbit_matches_forward_record() {
        for b in BranchIndex::up_to(12) {
            let y = 0.41;
            let orbit = BranchOrbit::new(b, y);
            let rec = return_data(orbit.points[0]).unwrap();
            assert!((rec.phi_sum - orbit.phi_sum()).abs() < 1e-12);
            let cocycle = -b.mobius().denominator(y).ln();
            assert!((orbit.phi_sum() - cocycle).abs() < 1e-13);
            for (a, c) in rec.itinerary.iter().zip(&orbit.points) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn induced_psi_examples() {
        let m = 2f64.ln();
        let x = 0.37;
        let rec = return_data(x).unwrap();
        assert_eq!(induced_psi(|_, _| 1.0, x, 0.2, m).unwrap(), rec.return_time as f64);
        let v = induced_psi(|p, _| phi_unchecked(p), x, 0.2, m).unwrap();
        assert!((v - rec.phi_sum).abs() < 1e-15);
        let psi = |_: f64, w: f64| (2.0 * std::f64::consts::PI * w / m).cos();
        let mut p = SkewPoint::with_modulus(x, 0.2, m);
        let mut direct = 0.0;
        for _ in 0..rec.return_time {
            direct += psi(p.x, p.omega);
            p = skew_step(p);
        }
        assert!((induced_psi(psi, x, 0.2, m).unwrap() - direct).abs() < 1e-12);
        let orbit = BranchOrbit::new(rec.branch, rec.image);
        assert!((induced_psi_on_branch(psi, &orbit, 0.2, m) - direct).abs() < 1e-12);
    }

    #[test]
    fn boundary_point_is_rejected() {
        assert!(matches!(return_data(0.2), Err(DynamicsError::NotInY(_))));
        // 2/5 is a branch endpoint: it reaches 1/2 and then the neutral point 0.
        assert!(matches!(return_data(0.4), Err(DynamicsError::NonReturn { .. })));
    }

    #[test]
    fn tower_steps() {
        let x = 0.45;
        let r = return_data(x).unwrap().return_time;
        assert!(r >= 2);
        let p = TowerPoint { base: x, height: 0 };
        assert_eq!(tower_step(p, 1).unwrap(), TowerPoint { base: x, height: 1 });
        let top = TowerPoint { base: x, height: r - 1 };
        let down = tower_step(top, 1).unwrap();
        assert_eq!(down.height, 0);
        assert!((down.base - induced_map(x).unwrap()).abs() < 1e-15);
        for k in 0..r {
            let p = TowerPoint { base: x, height: k };
            let lhs = tower_projection(tower_step(p, 1).unwrap());
            let rhs = farey_map(tower_projection(p));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
