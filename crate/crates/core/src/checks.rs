//! Structural checks on the induced system: the periodic-orbit obstruction to
//! cohomology with a locally constant function, the weak Federer covering on
//! `Y`, and the Young-tower conditions for the return map.
//!
//! The Federer probe runs one explicit construction at finitely many scales.
//! It can expose a growing constant but cannot certify the property, which
//! quantifies over all small scales.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{return_data, word_fixed_point, BranchIndex, BranchOrbit, DynamicsError, Mobius, Y_HI, Y_LO};
use crate::minkowski::{mu_mass, question_mark, DyadicRational, MinkowskiError};
use crate::rational::{FareyError, Rational};

/// Longest word accepted by [`orbit_obstruction`].
pub const MAX_WORD: usize = 12;
/// Tolerance on `T_Y^k y = y` along a periodic orbit.
pub const PERIOD_TOL: f64 = 1e-12;
/// Agreement required between the two Birkhoff-sum routes.
pub const ROUTE_TOL: f64 = 1e-10;
/// Witness points per ball in the Federer mass comparison.
pub const WITNESS_POINTS: usize = 15;
/// Largest return time covered by the tower audit.
pub const AUDIT_RMAX: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error("{point} = {value} is not in branch ({i},{j})")]
    Membership { point: &'static str, value: f64, i: u32, j: u32 },
    #[error("orbit does not close: |T_Y^{period} y - y| = {err:e}")]
    Periodicity { period: usize, err: f64 },
    #[error("word length {0} outside 1..={MAX_WORD}")]
    WordLength(usize),
    #[error("Birkhoff routes disagree: forward {forward}, pullback {pullback}")]
    Routes { forward: f64, pullback: f64 },
    #[error("covering constant must exceed 1, got {0}")]
    BadConstant(String),
    #[error("scale {0} must lie in (0, 1/100]")]
    BadScale(String),
    #[error("scale {eta} too coarse: only {pieces} pieces past the kept branches")]
    ScaleTooCoarse { eta: String, pieces: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Minkowski(#[from] MinkowskiError),
    #[error(transparent)]
    Farey(#[from] FareyError),
}

fn big(x: &Rational) -> BigRational {
    x.as_big().clone()
}

fn rat(x: BigRational) -> Rational {
    Rational::from_big(x)
}

fn branch(i: u32, j: u32) -> BranchIndex {
    BranchIndex { i, j }
}

/// `phi_Y(h_b(y))`, from the backward orbit.
fn induced_phi(b: BranchIndex, y: f64) -> f64 {
    BranchOrbit::new(b, y).phi_sum()
}

/// Fixed point of the branch `b` and its induced fiber increment.
fn branch_fixed(b: BranchIndex) -> (f64, f64) {
    let x = word_fixed_point(&[b]);
    (x, induced_phi(b, x))
}

fn expect_branch(point: &'static str, x: f64, b: BranchIndex) -> Result<f64, CheckError> {
    let rec = return_data(x)?;
    if rec.branch != b {
        return Err(CheckError::Membership { point, value: x, i: b.i, j: b.j });
    }
    Ok(rec.image)
}

#[derive(Clone, Debug, Serialize)]
pub struct CohomologyWitness {
    pub value: f64,
    /// The fixed points `x`, `x'` and the period-two point `y`.
    pub x: f64,
    pub x_prime: f64,
    pub y: f64,
    /// `|T_Y^2 y - y|`.
    pub period_error: f64,
}

/// `phi_Y(y) + phi_Y(T_Y y) - phi_Y(x) - phi_Y(x')` for the fixed points
/// `x = 3/2 - sqrt 5/2` of branch (1,0), `x' = 1 - sqrt 3/3` of branch (2,0),
/// and the period-two point `y = 1 - sqrt 6/4` visiting both.
pub fn cohomology_witness() -> Result<CohomologyWitness, CheckError> {
    let (b1, b2) = (branch(1, 0), branch(2, 0));
    let x = 1.5 - 0.5 * 5f64.sqrt();
    let x_prime = 1.0 - 3f64.sqrt() / 3.0;
    let y = 1.0 - 6f64.sqrt() / 4.0;

    for (name, p, b) in [("x", x, b1), ("x'", x_prime, b2)] {
        let image = expect_branch(name, p, b)?;
        if (image - p).abs() > PERIOD_TOL {
            return Err(CheckError::Periodicity { period: 1, err: (image - p).abs() });
        }
    }
    let ty = expect_branch("y", y, b1)?;
    let tty = expect_branch("T_Y y", ty, b2)?;
    let period_error = (tty - y).abs();
    if period_error > PERIOD_TOL {
        return Err(CheckError::Periodicity { period: 2, err: period_error });
    }

    let value = induced_phi(b1, ty) + induced_phi(b2, y) - induced_phi(b1, x) - induced_phi(b2, x_prime);
    Ok(CohomologyWitness { value, x, x_prime, y, period_error })
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitWitness {
    pub word: Vec<BranchIndex>,
    /// Periodic point of `T_Y` whose itinerary follows `word`.
    pub point: f64,
    /// Birkhoff sum of `g = phi_Y - phi_Y(x_h)` once around the cycle.
    pub birkhoff_value: f64,
    /// The same sum from forward returns.
    pub forward_value: f64,
    pub period_error: f64,
}

/// Periodic orbit for `word` and the Birkhoff sum along it of `phi_Y` minus
/// its value at each visited branch's fixed point. A nonzero sum rules out
/// `phi` being cohomologous to a locally constant function.
pub fn orbit_obstruction(word: &[BranchIndex]) -> Result<OrbitWitness, CheckError> {
    let k = word.len();
    if k == 0 || k > MAX_WORD {
        return Err(CheckError::WordLength(k));
    }
    if let Some(b) = word.iter().find(|b| b.i == 0) {
        return Err(DynamicsError::BadBranch(b.i, b.j).into());
    }
    let point = word_fixed_point(word);

    // Orbit points y_0 = point, y_{m} = h_{w_{m+1}}(y_{m+1}), pulled back from y_k = y_0.
    let mut orbit = vec![0.0; k + 1];
    orbit[k] = point;
    for m in (0..k).rev() {
        orbit[m] = BranchOrbit::new(word[m], orbit[m + 1]).points[0];
    }
    let period_error = (orbit[0] - point).abs();
    if period_error > PERIOD_TOL {
        return Err(CheckError::Periodicity { period: k, err: period_error });
    }

    let mut pullback = 0.0;
    let mut forward = 0.0;
    for (m, &b) in word.iter().enumerate() {
        let (_, phi_fixed) = branch_fixed(b);
        pullback += induced_phi(b, orbit[m + 1]) - phi_fixed;

        let rec = return_data(orbit[m])?;
        if rec.branch != b {
            return Err(CheckError::Membership { point: "orbit point", value: orbit[m], i: b.i, j: b.j });
        }
        forward += rec.phi_sum - phi_fixed;
    }
    if (forward - pullback).abs() > ROUTE_TOL {
        return Err(CheckError::Routes { forward, pullback });
    }
    Ok(OrbitWitness { word: word.to_vec(), point, birkhoff_value: pullback, forward_value: forward, period_error })
}

/// `K_n`, the part of `Y` mapped by `T` onto `(n/(n+1), (n+1)/(n+2))`:
/// the interval `(n/(2n+1), (n+1)/(2n+3))`.
pub fn k_interval(n: u32) -> (Rational, Rational) {
    let n = i64::from(n);
    (Rational::new(n, 2 * n + 1).unwrap(), Rational::new(n + 1, 2 * n + 3).unwrap())
}

/// Exact `mu(K_n)`.
pub fn k_mass(n: u32) -> Result<DyadicRational, CheckError> {
    let (a, b) = k_interval(n);
    Ok(mu_mass(&a, &b)?)
}

/// `|K_n| = 1/((2n+1)(2n+3))`.
pub fn k_length(n: u32) -> BigRational {
    let (a, b) = k_interval(n);
    big(&b) - big(&a)
}

/// `|K_{n+1}| / |K_n|`.
pub fn k_length_ratio(n: u32) -> f64 {
    (k_length(n + 1) / k_length(n)).to_f64().unwrap_or(f64::NAN)
}

/// The construction at one scale.
#[derive(Clone, Debug, Serialize)]
pub struct FedererScale {
    pub eta: f64,
    /// Number of intervals `K_1..K_N` of length at least `C eta` kept whole.
    pub kept_branches: u32,
    /// Pieces `J_0..J_p` cut from the rest of `Y`.
    pub pieces: usize,
    /// Largest `mu(A_i) / mu(B(x', eta))` over sets and witness points.
    pub mass_ratio: f64,
    /// Smallest `c` with every `A_i` inside `B(x_i, c C eta)`.
    pub containment: f64,
    /// `max(mass_ratio, containment)`: the Federer `D` this cover achieves.
    pub d_achieved: f64,
    /// `mu(Y)` minus the mass of the kept branches and the sets `A_i`.
    pub cover_defect: f64,
    pub balls_disjoint: bool,
    /// Every `mu(K_n)`, `n <= N`, equals `2^{-n-2}`.
    pub branch_masses_exact: bool,
    /// `mu(A_i) <= D mu(B(x', eta))` holds exactly at every witness point.
    pub exact_comparison: bool,
    pub construction_log: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FedererReport {
    pub c: f64,
    pub eta_list: Vec<f64>,
    pub scales: Vec<FedererScale>,
    pub d_max: f64,
    pub d_median: f64,
    pub note: &'static str,
}

impl FedererReport {
    pub fn d_achieved(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s.d_achieved).collect()
    }

    pub fn max_over_median(&self) -> f64 {
        self.d_max / self.d_median
    }

    pub fn max_cover_defect(&self) -> f64 {
        self.scales.iter().map(|s| s.cover_defect.abs()).fold(0.0, f64::max)
    }

    /// Bounded `D` (max within twice the median), covers complete to `1e-10`,
    /// disjoint balls and exact branch masses at every scale.
    pub fn passes(&self) -> bool {
        self.max_over_median() <= 2.0
            && self.max_cover_defect() < 1e-10
            && self.scales.iter().all(|s| s.balls_disjoint && s.branch_masses_exact && s.exact_comparison)
    }
}

/// `eta = 2^{-m}` for each `m` in the range.
pub fn dyadic_scales(exponents: std::ops::RangeInclusive<u32>) -> Vec<Rational> {
    exponents.map(|m| Rational::new(1, BigInt::one() << m).unwrap()).collect()
}

fn mass(a: &BigRational, b: &BigRational) -> Result<DyadicRational, CheckError> {
    Ok(mu_mass(&rat(a.clone()), &rat(b.clone()))?)
}

fn ratio_f64(num: &DyadicRational, den: &DyadicRational) -> f64 {
    num.ratio(den)
}

fn federer_scale(c: &BigRational, eta: &BigRational) -> Result<FedererScale, CheckError> {
    let eta_str = eta.to_string();
    let c_eta = c * eta;
    let half = BigRational::new(1.into(), 2.into());

    let mut n = 0u32;
    while k_length(n + 1) >= c_eta {
        n += 1;
    }
    let mut log = vec![format!("eta={eta_str}: keep K_1..K_{n} (|K_{n}| >= C eta)")];

    let mut branch_masses_exact = true;
    let mut covered = DyadicRational::zero();
    for m in 1..=n {
        let km = k_mass(m)?;
        branch_masses_exact &= km == DyadicRational::new(1, u64::from(m) + 2);
        covered = covered.add(&km);
    }

    // Rest of Y: [(N+1)/(2N+3), 1/2], cut into pieces of length 2 C eta with the
    // leftover absorbed by the first.
    let start = big(&k_interval(n).1);
    let rest = &half - &start;
    let width = BigRational::from_integer(2.into()) * &c_eta;
    let count = (&rest / &width).floor().to_integer().to_usize().unwrap_or(0);
    if count < 3 {
        return Err(CheckError::ScaleTooCoarse { eta: eta_str, pieces: count });
    }
    let first_end = &half - BigRational::from_integer((count - 1).into()) * &width;
    let mut cuts = vec![start.clone(), first_end];
    for k in 1..count {
        cuts.push(&cuts[1] + BigRational::from_integer(k.into()) * &width);
    }
    let p = count - 1;
    log.push(format!("rest [{start}, 1/2] cut into J_0..J_{p}, |J_0| = {}", (&cuts[1] - &cuts[0]).to_f64().unwrap_or(f64::NAN)));

    // A_1 = J_0 u J_1, A_i = J_i; ball 1 is the left end of J_0, ball i is J_{i-1}.
    let sets: Vec<(BigRational, BigRational)> = std::iter::once((cuts[0].clone(), cuts[2].clone()))
        .chain((2..=p).map(|i| (cuts[i].clone(), cuts[i + 1].clone())))
        .collect();
    let balls: Vec<(BigRational, BigRational)> = std::iter::once((cuts[0].clone(), &cuts[0] + &width))
        .chain((2..=p).map(|i| (cuts[i - 1].clone(), cuts[i].clone())))
        .collect();
    let balls_disjoint = balls.windows(2).all(|w| w[0].1 <= w[1].0) && balls.last().map_or(true, |b| b.1 < half);

    for (a, b) in &sets {
        covered = covered.add(&mass(a, b)?);
    }
    let y_mass = mass(&big(&Rational::new(1, 3).unwrap()), &half)?;
    let cover_defect = y_mass.sub(&covered).to_f64();

    // Witness points x' in B(x_i, (C-1) eta), each with the ball B(x', eta).
    let one = BigRational::one();
    let reach = (c - &one) * eta;
    let mut mass_ratio = 0.0f64;
    let mut containment = 0.0f64;
    let mut worst = (0usize, 0.0f64);
    let mut pairs = Vec::with_capacity(sets.len() * WITNESS_POINTS);
    for (i, ((a, b), (ba, bb))) in sets.iter().zip(&balls).enumerate() {
        let centre = (ba + bb) / BigRational::from_integer(2.into());
        let far = std::cmp::max(b - &centre, &centre - a);
        containment = containment.max((far / &c_eta).to_f64().unwrap_or(f64::NAN));
        let set_mass = mass(a, b)?;
        for w in 1..=WITNESS_POINTS {
            let frac = BigRational::new(BigInt::from(2 * w as i64 - WITNESS_POINTS as i64 - 1), BigInt::from(WITNESS_POINTS as i64 + 1));
            let xp = &centre + frac * &reach;
            let ball_mass = mass(&(&xp - eta), &(&xp + eta))?;
            let r = ratio_f64(&set_mass, &ball_mass);
            if r > mass_ratio {
                mass_ratio = r;
                worst = (i + 1, r);
            }
            pairs.push((set_mass.clone(), ball_mass));
        }
    }
    // The rounded-up float constant must dominate every pair in exact arithmetic.
    let bound = DyadicRational::from_f64(mass_ratio * (1.0 + 1e-12)).unwrap_or_else(DyadicRational::zero);
    let exact_comparison = pairs.iter().all(|(set, ball)| ball.mul(&bound) >= *set);
    log.push(format!("{} sets; worst mass ratio {:.6} at A_{}; containment factor {:.4}", sets.len(), worst.1, worst.0, containment));

    Ok(FedererScale {
        eta: eta.to_f64().unwrap_or(f64::NAN),
        kept_branches: n,
        pieces: p + 1,
        mass_ratio,
        containment,
        d_achieved: mass_ratio.max(containment),
        cover_defect,
        balls_disjoint,
        branch_masses_exact,
        exact_comparison,
        construction_log: log,
    })
}

/// Runs the explicit Farey cover on `Y` at every scale in `eta_list`.
pub fn federer_probe(c: &Rational, eta_list: &[Rational]) -> Result<FedererReport, CheckError> {
    let cb = big(c);
    if cb <= BigRational::one() {
        return Err(CheckError::BadConstant(c.to_string()));
    }
    let limit = BigRational::new(1.into(), 100.into());
    for eta in eta_list {
        let e = big(eta);
        if e <= BigRational::zero() || e > limit {
            return Err(CheckError::BadScale(eta.to_string()));
        }
    }
    let scales = eta_list
        .par_iter()
        .map(|eta| federer_scale(&cb, &big(eta)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ds: Vec<f64> = scales.iter().map(|s| s.d_achieved).collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let d_max = ds.last().copied().unwrap_or(f64::NAN);
    let d_median = if ds.is_empty() {
        f64::NAN
    } else if ds.len() % 2 == 1 {
        ds[ds.len() / 2]
    } else {
        0.5 * (ds[ds.len() / 2 - 1] + ds[ds.len() / 2])
    };
    Ok(FedererReport {
        c: c.to_f64(),
        eta_list: eta_list.iter().map(Rational::to_f64).collect(),
        scales,
        d_max,
        d_median,
        note: "finite-scale probe of one explicit cover: can falsify, not certify, the weak Federer property",
    })
}

/// Partial sums of `sum_{n >= 2} (n-1) 2^{-n} e^{sigma n}`, the moment
/// `int e^{sigma r} d mu_Y` of the return time.
#[derive(Clone, Debug, Serialize)]
pub struct MomentSeries {
    pub sigma: f64,
    /// `(N, S_N)` for `N = 50, 100, 200, 400, 800`.
    pub partial_sums: Vec<(u32, f64)>,
    /// `q^2/(1-q)^2` with `q = e^sigma/2`, when `q < 1`.
    pub closed_form: Option<f64>,
    pub converged: bool,
}

pub fn return_time_moment(sigma: f64) -> MomentSeries {
    let q = sigma.exp() / 2.0;
    let checkpoints = [50u32, 100, 200, 400, 800];
    let mut partial_sums = Vec::new();
    let mut s = 0.0;
    let mut term_weight = q; // q^n
    for n in 2..=*checkpoints.last().unwrap() {
        term_weight *= q;
        s += f64::from(n - 1) * term_weight;
        if checkpoints.contains(&n) {
            partial_sums.push((n, s));
        }
    }
    let tail: Vec<f64> = partial_sums.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let last = *partial_sums.last().map(|(_, v)| v).unwrap();
    let converged = last.is_finite()
        && tail.windows(2).all(|w| w[1] <= w[0])
        && *tail.last().unwrap() <= 1e-12 * last.abs().max(1.0);
    let closed_form = (q < 1.0).then(|| q * q / ((1.0 - q) * (1.0 - q)));
    MomentSeries { sigma, partial_sums, closed_form, converged }
}

/// Return-time moment summed branch by branch from exact masses, up to `rmax`.
pub fn branch_moment(sigma: f64, rmax: u32) -> Result<f64, CheckError> {
    let y_mass = mu_mass(&Rational::new(1, 3).unwrap(), &Rational::new(1, 2).unwrap())?;
    let mut total = 0.0;
    for b in BranchIndex::up_to(rmax) {
        let (lo, hi) = b.interval_exact();
        let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let m = mu_mass(&lo, &hi)?;
        total += ratio_f64(&m, &y_mass) * (sigma * f64::from(b.return_time())).exp();
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct TowerAudit {
    pub rmax: u32,
    /// `min |T_Y'|` over branches and the grid.
    pub kappa: f64,
    /// `|T_Y'|` at the fixed point of branch (1,0).
    pub kappa_fixed_point: f64,
    /// Largest variation of `log J` over a branch; the jacobian is `2^r` exactly.
    pub log_jacobian_variation: f64,
    /// `sup |(T^k o h)'|` over branches, `0 <= k < r`, and the grid.
    pub composition_sup: f64,
    pub moment: MomentSeries,
    /// The same moment from exact branch masses, truncated at `rmax`.
    pub branch_moment: f64,
    /// Control series past the radius `log 2`, expected to diverge.
    pub divergent_probe: MomentSeries,
}

impl TowerAudit {
    pub fn passes(&self) -> bool {
        let truncated = self
            .moment
            .partial_sums
            .first()
            .map(|_| {
                let q = self.moment.sigma.exp() / 2.0;
                (2..=self.rmax).map(|n| f64::from(n - 1) * q.powi(n as i32)).sum::<f64>()
            })
            .unwrap_or(f64::NAN);
        self.kappa > 1.01
            && self.kappa <= self.kappa_fixed_point
            && self.log_jacobian_variation == 0.0
            && self.composition_sup.is_finite()
            && self.moment.converged
            && self.moment.closed_form.map_or(false, |c| (c - self.moment.partial_sums.last().unwrap().1).abs() < 1e-12 * c)
            && (self.branch_moment - truncated).abs() < 1e-12 * truncated
            && !self.divergent_probe.converged
    }
}

/// `T^k o h` for the branch `h`.
fn tail_mobius(b: BranchIndex, k: u32) -> Mobius {
    // drops the first k letters of h_A o h_B^i o h_A^j
    match k {
        0 => b.mobius(),
        k if k <= b.i => Mobius::B.pow(b.i + 1 - k).compose(Mobius::A.pow(b.j)),
        k => Mobius::A.pow(b.j + b.i + 1 - k),
    }
}

/// Checks the tower conditions for the return map on branches with `r <= 30`:
/// uniform expansion, constant jacobian per branch, bounded intermediate
/// compositions and an exponential moment of the return time at
/// `sigma_0 = (log 2)/2`.
pub fn tower_audit() -> Result<TowerAudit, CheckError> {
    let rmax = AUDIT_RMAX;
    let grid: Vec<f64> = (0..=1000).map(|k| Y_LO + (Y_HI - Y_LO) * k as f64 / 1000.0).collect();

    let mut kappa = f64::INFINITY;
    let mut composition_sup = 0.0f64;
    for b in BranchIndex::up_to(rmax) {
        let h = b.mobius();
        for &y in &grid {
            kappa = kappa.min(1.0 / h.derivative(y).abs());
            for k in 0..b.return_time() {
                composition_sup = composition_sup.max(tail_mobius(b, k).derivative(y).abs());
            }
        }
    }
    let (x, _) = branch_fixed(branch(1, 0));
    let kappa_fixed_point = 1.0 / branch(1, 0).mobius().derivative(x).abs();

    // mu(h(J)) = 2^{-r} mu(J) for every level-8 Farey subinterval J of Y.
    let farey: Vec<Rational> = crate::rational::farey_level(8)?
        .fractions()
        .iter()
        .filter(|q| big(q) >= BigRational::new(1.into(), 3.into()) && big(q) <= BigRational::new(1.into(), 2.into()))
        .cloned()
        .collect();
    let mut log_jacobian_variation = 0.0f64;
    for b in BranchIndex::up_to(rmax) {
        let h = b.mobius();
        let scale = DyadicRational::new(1, u64::from(b.return_time()));
        for w in farey.windows(2) {
            let (lo, hi) = (h.apply_exact(&w[0]), h.apply_exact(&w[1]));
            let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
            let image = mu_mass(&lo, &hi)?;
            let expected = mu_mass(&w[0], &w[1])?.mul(&scale);
            if image != expected {
                let dev = (ratio_f64(&image, &expected)).ln().abs();
                log_jacobian_variation = log_jacobian_variation.max(dev);
            }
        }
    }

    let sigma = 0.5 * std::f64::consts::LN_2;
    Ok(TowerAudit {
        rmax,
        kappa,
        kappa_fixed_point,
        log_jacobian_variation,
        composition_sup,
        moment: return_time_moment(sigma),
        branch_moment: branch_moment(sigma, rmax)?,
        divergent_probe: return_time_moment(std::f64::consts::LN_2 + 0.1),
    })
}

/// `?` at an endpoint, used by the report printers.
pub fn mass_coordinate(x: &Rational) -> Result<f64, CheckError> {
    Ok(question_mark(x)?.to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_value_and_prechecks() {
        let w = cohomology_witness().unwrap();
        assert!((w.value + 0.013).abs() < 1e-3, "{}", w.value);
        assert!((w.value + 0.013050122517152207).abs() < 1e-12, "{}", w.value);
        assert!(w.period_error < 1e-12);
        // y is the periodic point of the word (1,0),(2,0)
        assert!((word_fixed_point(&[branch(1, 0), branch(2, 0)]) - w.y).abs() < 1e-14);
    }

    #[test]
    fn degenerate_witness_is_zero() {
        // Replacing y by x and x' by x turns the expression into phi(x)+phi(x)-phi(x)-phi(x).
        let (x, phi_x) = branch_fixed(branch(1, 0));
        let v = induced_phi(branch(1, 0), x) + phi_x - 2.0 * phi_x;
        assert_eq!(v, 0.0);
    }

    #[test]
    fn obstruction_examples() {
        let single = orbit_obstruction(&[branch(1, 0)]).unwrap();
        assert_eq!(single.birkhoff_value, 0.0);
        let w = orbit_obstruction(&[branch(1, 0), branch(2, 0)]).unwrap();
        let c = cohomology_witness().unwrap();
        assert!((w.birkhoff_value - c.value).abs() < 1e-12);
        let rev = orbit_obstruction(&[branch(2, 0), branch(1, 0)]).unwrap();
        assert!((rev.birkhoff_value - w.birkhoff_value).abs() < 1e-12);
        assert!((w.forward_value - w.birkhoff_value).abs() < 1e-10);
    }

    #[test]
    fn obstruction_rotations_agree() {
        let word = [branch(1, 2), branch(3, 0), branch(2, 1), branch(1, 0)];
        let base = orbit_obstruction(&word).unwrap().birkhoff_value;
        for s in 1..word.len() {
            let mut rot = word.to_vec();
            rot.rotate_left(s);
            let v = orbit_obstruction(&rot).unwrap().birkhoff_value;
            assert!((v - base).abs() < 1e-11, "{v} vs {base}");
        }
    }

    #[test]
    fn obstruction_rejects_bad_words() {
        assert!(matches!(orbit_obstruction(&[]), Err(CheckError::WordLength(0))));
        let long = vec![branch(1, 0); 13];
        assert!(matches!(orbit_obstruction(&long), Err(CheckError::WordLength(13))));
        assert!(orbit_obstruction(&[BranchIndex { i: 0, j: 1 }]).is_err());
    }

    #[test]
    fn k_intervals_tile_y() {
        assert_eq!(k_interval(1).0, Rational::new(1, 3).unwrap());
        for n in 1..=30 {
            assert_eq!(k_interval(n).1, k_interval(n + 1).0);
            assert_eq!(k_mass(n).unwrap(), DyadicRational::new(1, u64::from(n) + 2));
            assert_eq!(k_length(n), BigRational::new(1.into(), BigInt::from((2 * n + 1) * (2 * n + 3))));
        }
        // (2n+1)/(2n+5) is within 1e-2 of 1 from n = 200 on
        assert!((1.0 - k_length_ratio(200)).abs() < 1e-2);
        assert!((1.0 - k_length_ratio(100)).abs() > 1e-2);
    }

    #[test]
    fn federer_single_scale() {
        let c = Rational::new(2, 1).unwrap();
        let r = federer_probe(&c, &dyadic_scales(10..=10)).unwrap();
        let s = &r.scales[0];
        assert_eq!(s.cover_defect, 0.0);
        assert!(s.balls_disjoint && s.branch_masses_exact && s.exact_comparison);
        assert!(s.containment <= 5.0 && s.containment >= 3.0, "{}", s.containment);
        assert!(s.mass_ratio > 1.0 && s.mass_ratio.is_finite());
    }

    #[test]
    fn federer_rejects_bad_input() {
        let two = Rational::new(2, 1).unwrap();
        assert!(matches!(federer_probe(&Rational::one(), &dyadic_scales(8..=8)), Err(CheckError::BadConstant(_))));
        assert!(matches!(federer_probe(&two, &[Rational::new(1, 10).unwrap()]), Err(CheckError::BadScale(_))));
        // at eta = 2^-7 and 2^-8 the remainder holds fewer than three pieces
        for m in [7, 8] {
            let coarse = federer_probe(&two, &dyadic_scales(m..=m));
            assert!(matches!(coarse, Err(CheckError::ScaleTooCoarse { .. })), "{coarse:?}");
        }
        assert!(federer_probe(&two, &dyadic_scales(9..=9)).is_ok());
    }

    #[test]
    fn federer_sweep_is_bounded() {
        let r = federer_probe(&Rational::new(2, 1).unwrap(), &dyadic_scales(9..=20)).unwrap();
        assert!(r.scales.iter().all(|s| s.d_achieved.is_finite()));
        assert!(r.max_over_median() <= 2.0, "{:?}", r.d_achieved());
        assert!(r.passes(), "{:?}", r.scales.iter().map(|s| (s.cover_defect, s.balls_disjoint, s.branch_masses_exact, s.exact_comparison)).collect::<Vec<_>>());
    }

    #[test]
    fn moment_series() {
        let m = return_time_moment(0.0);
        assert!((m.closed_form.unwrap() - 1.0).abs() < 1e-15);
        assert!(m.converged);
        let near = return_time_moment(std::f64::consts::LN_2 - 0.1);
        assert!(near.converged && near.closed_form.is_some());
        let past = return_time_moment(std::f64::consts::LN_2 + 0.1);
        assert!(!past.converged && past.closed_form.is_none());
        let s = 0.5 * std::f64::consts::LN_2;
        let q = s.exp() / 2.0;
        let truncated: f64 = (2..=12).map(|n| f64::from(n - 1) * q.powi(n as i32)).sum();
        assert!((branch_moment(s, 12).unwrap() - truncated).abs() < 1e-13);
    }

    #[test]
    fn tower_conditions() {
        let a = tower_audit().unwrap();
        assert!(a.kappa > 1.01, "{}", a.kappa);
        // branch (1,0) has the weakest expansion, (3-y)^2 >= 25/4 at y = 1/2
        assert!((a.kappa - 6.25).abs() < 1e-9, "{}", a.kappa);
        assert_eq!(a.log_jacobian_variation, 0.0);
        assert!(a.composition_sup <= 1.0 + 1e-12, "{}", a.composition_sup);
        assert!(a.passes(), "{a:?}");
    }
}
