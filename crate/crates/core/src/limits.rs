//! Limit theorems for the skew product, measured: exact mixing over Farey
//! levels, Green–Kubo variance, CLT, LLT and characteristic functions.
//!
//! Stationary orbit segments are generated from their far end. Under the
//! conjugacy `?`, `T` is the doubling map, so a `mu`-distributed endpoint
//! `x_n` and fair bits choosing `h_A` or `h_B` give `x_{n-1}, ..., x_0` with
//! the exact stationary law, without the forward float orbit collapsing onto
//! a rational. The fiber coordinate is run backwards from a uniform `omega_n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{wrap, SkewPoint};
use crate::minkowski::{question_mark_inverse, MinkowskiError};
use crate::observable::{invariant_mean, Observable, ObservableError};
use crate::stats::{self, linear_fit, LinearFit};
use crate::transfer::{self, TransferConfig, TransferError};

/// Largest Farey level for [`exact_mixing_error`].
pub const MAX_MIXING_LEVEL: u32 = 22;
pub const MAX_LAG: usize = 200;
/// `n t^2` bound for [`char_function_probe`].
pub const MAX_CHARFN_SPREAD: f64 = 50.0;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("level {0} exceeds {MAX_MIXING_LEVEL}")]
    LevelTooLarge(u32),
    #[error("lag {0} exceeds {MAX_LAG}")]
    LagTooLarge(usize),
    #[error("need at least {need} trials, got {got}")]
    TooFewTrials { need: usize, got: usize },
    #[error("variance estimate {sigma2} is not positive at 3 standard errors ({stderr})")]
    Degenerate { sigma2: f64, stderr: f64 },
    #[error("n t^2 = {0} exceeds {MAX_CHARFN_SPREAD}")]
    NoiseRegime(f64),
    #[error("interval [{0}, {1}] is reversed")]
    BadInterval(f64, f64),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Minkowski(#[from] MinkowskiError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

/// Monte Carlo settings. Results depend only on `(seed, trials, n_steps)`:
/// every trajectory has its own stream and reductions run in index order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub n_steps: usize,
    pub r_modulus: f64,
    pub worker_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0x5eed,
            trials: 100_000,
            n_steps: 2000,
            r_modulus: 2.0,
            worker_count: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

impl RunConfig {
    pub fn modulus(&self) -> f64 {
        self.r_modulus.ln()
    }

    /// Copy with a different seed, for runs that must not share streams.
    pub fn reseeded(&self, salt: u64) -> Self {
        RunConfig { seed: self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), ..*self }
    }

    fn run<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T, LimitsError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count.max(1))
            .build()
            .map_err(|e| LimitsError::Pool(e.to_string()))?;
        Ok(pool.install(job))
    }

    /// Per-trajectory values in index order.
    fn map_trials<T: Send>(&self, f: impl Fn(u64) -> Result<T, LimitsError> + Sync + Send) -> Result<Vec<T>, LimitsError> {
        let trials = self.trials as u64;
        self.run(|| (0..trials).into_par_iter().map(&f).collect::<Result<Vec<_>, _>>())?
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_invariant(rng: &mut ChaCha8Rng, modulus: f64) -> Result<(f64, f64), LimitsError> {
    let u: f64 = rng.gen();
    let x = question_mark_inverse(u, 1e-15)?;
    Ok((x, rng.gen::<f64>() * modulus))
}

/// A point distributed as `mu x Leb` on `[0,1] x [0, log r)`.
pub fn sample_invariant(seed: u64, r: f64) -> Result<SkewPoint, LimitsError> {
    let (x, omega) = draw_invariant(&mut trajectory_rng(seed, 0), r.ln())?;
    Ok(SkewPoint::new(x, omega, r).expect("sampled point lies in the phase space"))
}

/// Visits `(k, x_k, omega_k)` for `k = n, n-1, ..., 0` along a stationary
/// orbit segment of trajectory `index`.
pub fn backward_path(
    seed: u64,
    index: u64,
    n: usize,
    modulus: f64,
    mut visit: impl FnMut(usize, f64, f64),
) -> Result<(), LimitsError> {
    let mut rng = trajectory_rng(seed, index);
    let (mut x, mut w) = draw_invariant(&mut rng, modulus)?;
    visit(n, x, w);
    let (mut bits, mut left) = (0u64, 0u32);
    for k in (0..n).rev() {
        if left == 0 {
            bits = rng.next_u64();
            left = 64;
        }
        let on_b = bits & 1 == 1;
        bits >>= 1;
        left -= 1;
        // x_k = h(x_{k+1}); phi(x_k) = -log(1 + x_{k+1}) on A, -log(2 - x_{k+1}) on B
        let (prev, phi) = if on_b { (1.0 / (2.0 - x), -(2.0 - x).ln()) } else { (x / (1.0 + x), -x.ln_1p()) };
        w = wrap(w - phi, modulus);
        x = prev;
        visit(k, x, w);
    }
    Ok(())
}

/// `psi(x_k, omega_k)` for `k = 0..n` (inclusive) on one stationary segment.
fn path_values(psi: &Observable, seed: u64, index: u64, n: usize, modulus: f64) -> Result<Vec<f64>, LimitsError> {
    let mut out = vec![0.0; n + 1];
    backward_path(seed, index, n, modulus, |k, x, w| out[k] = psi.eval(x, w))?;
    Ok(out)
}

/// Birkhoff sum `S_n psi = sum_{k<n} psi(x_k, omega_k)` on one segment.
fn birkhoff(psi: &Observable, seed: u64, index: u64, n: usize, modulus: f64) -> Result<f64, LimitsError> {
    let mut s = 0.0;
    backward_path(seed, index, n, modulus, |k, x, w| {
        if k < n {
            s += psi.eval(x, w)
        }
    })?;
    Ok(s)
}

/// Sum in index order, so the total does not depend on the worker count.
fn ordered_sum(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a + b)
}

/// Exact mixing errors `|mean over the level-n lift of f - int f d(mu x Leb)|`.
#[derive(Clone, Debug)]
pub struct MixingReport {
    pub reference: f64,
    /// `(n, signed error)` for `n = 1..=n_max`.
    pub errors: Vec<(u32, f64)>,
    /// Fit of `log |e_n|` over the window.
    pub fit: LinearFit,
    pub theta: f64,
    pub window: (u32, u32),
    /// Fit of the running envelope `max_{m >= n} |e_m|`; diagnostic only.
    pub envelope_fit: LinearFit,
}

/// Sums of `f(p/q, log q)` over the mediants created at each level, by a
/// depth-first walk of the Stern–Brocot tree between `0/1` and `1/1`.
fn level_sums(f: &Observable, n_max: u32, modulus: f64) -> Vec<f64> {
    let mut sums = vec![0.0; n_max as usize + 1];
    sums[0] = f.eval(1.0, 0.0);
    let mut stack: Vec<(u64, u64, u64, u64, u32)> = vec![(0, 1, 1, 1, 1)];
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); n_max as usize + 1];
    while let Some((a, b, c, d, level)) = stack.pop() {
        let (p, q) = (a + c, b + d);
        per_level[level as usize].push(f.eval(p as f64 / q as f64, wrap((q as f64).ln(), modulus)));
        if level < n_max {
            stack.push((p, q, c, d, level + 1));
            stack.push((a, b, p, q, level + 1));
        }
    }
    for (n, vals) in per_level.iter().enumerate().skip(1) {
        sums[n] = ordered_sum(vals.iter().copied());
    }
    sums
}

pub fn exact_mixing_error(f: &Observable, n_max: u32) -> Result<MixingReport, LimitsError> {
    exact_mixing_error_window(f, n_max, (6, n_max))
}

pub fn exact_mixing_error_window(f: &Observable, n_max: u32, window: (u32, u32)) -> Result<MixingReport, LimitsError> {
    if n_max > MAX_MIXING_LEVEL {
        return Err(LimitsError::LevelTooLarge(n_max));
    }
    let reference = invariant_mean(f)?;
    let sums = level_sums(f, n_max, f.modulus);
    let mut cumulative = sums[0];
    let mut errors = Vec::with_capacity(n_max as usize);
    for (n, s) in sums.iter().enumerate().skip(1) {
        cumulative += s;
        errors.push((n as u32, cumulative / 2f64.powi(n as i32) - reference));
    }
    let (lo, hi) = (window.0.max(1), window.1.min(n_max));
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .filter(|(n, e)| *n >= lo && *n <= hi && e.abs() > 0.0)
        .map(|(n, e)| (*n as f64, e.abs().ln()))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let fit = if x.len() >= 2 { linear_fit(&x, &y) } else { LinearFit { slope: f64::NEG_INFINITY, intercept: 0.0, r_squared: 1.0 } };
    let mut env = Vec::with_capacity(x.len());
    let mut running = 0.0f64;
    for &(n, e) in errors.iter().rev() {
        running = running.max(e.abs());
        if n >= lo && n <= hi && running > 0.0 {
            env.push((n as f64, running.ln()));
        }
    }
    env.reverse();
    let (ex, ey): (Vec<f64>, Vec<f64>) = env.into_iter().unzip();
    let envelope_fit = if ex.len() >= 2 { linear_fit(&ex, &ey) } else { fit };
    Ok(MixingReport { reference, errors, theta: fit.slope.exp(), fit, window: (lo, hi), envelope_fit })
}

/// Green–Kubo variance estimate.
#[derive(Clone, Debug)]
pub struct SigmaReport {
    pub sigma2: f64,
    pub stderr: f64,
    /// Bound on the neglected autocovariances beyond `lag_max`, included in `stderr`.
    pub tail_bound: f64,
    /// Estimated autocovariances `C(0), ..., C(lag_max)`.
    pub autocovariance: Vec<f64>,
    pub mean_removed: f64,
    /// Negative beyond three standard errors for an observable not built as a coboundary.
    pub flagged: bool,
}

/// Positions per trajectory used for the windowed sum.
const GK_WINDOW: usize = 2000;
/// Trajectories whose lag products feed the per-lag autocovariances.
const GK_LAG_TRIALS: usize = 2000;

/// `sigma^2 = C(0) + 2 sum_{k >= 1} C(k)`, estimated per trajectory as
/// `(1/M) sum_j psi_j (psi_{j-L} + ... + psi_{j+L})` with prefix sums.
pub fn sigma_squared(psi: &Observable, lag_max: usize, cfg: &RunConfig) -> Result<SigmaReport, LimitsError> {
    if lag_max > MAX_LAG {
        return Err(LimitsError::LagTooLarge(lag_max));
    }
    if cfg.trials < 2 {
        return Err(LimitsError::TooFewTrials { need: 2, got: cfg.trials });
    }
    let (centered, mean) = psi.centered()?;
    let modulus = cfg.modulus();
    let len = GK_WINDOW + 2 * lag_max;
    let per_trial = cfg.map_trials(|i| {
        let vals = path_values(&centered, cfg.seed, i, len, modulus)?;
        let mut prefix = Vec::with_capacity(vals.len() + 1);
        prefix.push(0.0);
        for v in &vals {
            prefix.push(prefix.last().unwrap() + v);
        }
        let window: f64 = (lag_max..lag_max + GK_WINDOW)
            .map(|j| vals[j] * (prefix[j + lag_max + 1] - prefix[j - lag_max]))
            .sum::<f64>()
            / GK_WINDOW as f64;
        let lags = if (i as usize) < GK_LAG_TRIALS {
            (0..=lag_max)
                .map(|k| (0..GK_WINDOW).map(|j| vals[j] * vals[j + k]).sum::<f64>() / GK_WINDOW as f64)
                .collect()
        } else {
            Vec::new()
        };
        Ok((window, lags))
    })?;
    let windows: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let (sigma2, se) = stats::mean_and_stderr(&windows);
    let lag_rows: Vec<&Vec<f64>> = per_trial.iter().map(|p| &p.1).filter(|v| !v.is_empty()).collect();
    let autocovariance: Vec<f64> = (0..=lag_max)
        .map(|k| ordered_sum(lag_rows.iter().map(|r| r[k])) / lag_rows.len() as f64)
        .collect();
    let tail_bound = geometric_tail(&autocovariance, lag_rows.len());
    let stderr = (se * se + tail_bound * tail_bound).sqrt();
    let flagged = !psi.coboundary && sigma2 < -3.0 * stderr;
    Ok(SigmaReport { sigma2, stderr, tail_bound, autocovariance, mean_removed: mean, flagged })
}

/// `2 sum_{k > K} |C(k)|` from a geometric fit of the resolved part of `|C(k)|`.
fn geometric_tail(c: &[f64], rows: usize) -> f64 {
    let lag_max = c.len() - 1;
    if lag_max < 2 {
        return 0.0;
    }
    // Lags whose covariance clears the sampling noise of a single lag product.
    let noise = 3.0 * c[0].abs() / (rows as f64 * GK_WINDOW as f64).sqrt();
    let pts: Vec<(f64, f64)> = (1..=lag_max)
        .take_while(|&k| c[k].abs() > noise)
        .map(|k| (k as f64, c[k].abs().ln()))
        .collect();
    if pts.len() < 3 {
        return noise;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = linear_fit(&x, &y);
    let theta = fit.slope.exp();
    if theta >= 1.0 {
        return 2.0 * c[lag_max].abs() * lag_max as f64;
    }
    let next = (fit.intercept + fit.slope * (lag_max + 1) as f64).exp();
    (2.0 * next / (1.0 - theta)).max(noise)
}

#[derive(Clone, Debug)]
pub struct CltReport {
    pub n: usize,
    pub trials: usize,
    pub sigma2: f64,
    pub sigma2_stderr: f64,
    /// KS distance of `S_n / sqrt n` to `N(0, sigma2)`; `None` on the degenerate branch.
    pub ks: Option<f64>,
    /// Sample `Var(S_n) / n`.
    pub variance_ratio: f64,
    pub degenerate: bool,
    pub threshold: f64,
    pub pass: bool,
    /// `(bin centre, empirical density, normal density)` over `+-4 sigma`.
    pub density: Vec<(f64, f64, f64)>,
}

pub const KS_THRESHOLD: f64 = 0.02;
/// `Var(S_n)/n` below this takes the degenerate (coboundary) branch.
pub const DEGENERATE_RATIO: f64 = 0.01;

fn normalized_sums(psi: &Observable, n: usize, cfg: &RunConfig) -> Result<Vec<f64>, LimitsError> {
    let modulus = cfg.modulus();
    let scale = 1.0 / (n as f64).sqrt();
    cfg.map_trials(|i| Ok(birkhoff(psi, cfg.seed, i, n, modulus)? * scale))
}

pub fn clt_test(psi: &Observable, n: usize, cfg: &RunConfig) -> Result<CltReport, LimitsError> {
    let (centered, _) = psi.centered()?;
    let sample = normalized_sums(&centered, n, cfg)?;
    let (m, _) = stats::mean_and_stderr(&sample);
    let variance_ratio = ordered_sum(sample.iter().map(|v| (v - m).powi(2))) / (sample.len() as f64 - 1.0);
    let sigma = sigma_squared(psi, 60, &cfg.reseeded(1))?;
    if variance_ratio < DEGENERATE_RATIO {
        return Ok(CltReport {
            n,
            trials: cfg.trials,
            sigma2: sigma.sigma2,
            sigma2_stderr: sigma.stderr,
            ks: None,
            variance_ratio,
            degenerate: true,
            threshold: DEGENERATE_RATIO,
            pass: psi.coboundary,
            density: Vec::new(),
        });
    }
    if sigma.sigma2 <= 3.0 * sigma.stderr {
        return Err(LimitsError::Degenerate { sigma2: sigma.sigma2, stderr: sigma.stderr });
    }
    let sd = sigma.sigma2.sqrt();
    let ks = stats::ks_distance(&sample, |x| stats::normal_cdf(x, sd));
    let density = histogram(&sample, sd);
    Ok(CltReport {
        n,
        trials: cfg.trials,
        sigma2: sigma.sigma2,
        sigma2_stderr: sigma.stderr,
        ks: Some(ks),
        variance_ratio,
        degenerate: false,
        threshold: KS_THRESHOLD,
        pass: ks < KS_THRESHOLD,
        density,
    })
}

const HISTOGRAM_BINS: usize = 40;

fn histogram(sample: &[f64], sd: f64) -> Vec<(f64, f64, f64)> {
    let (lo, width) = (-4.0 * sd, 8.0 * sd / HISTOGRAM_BINS as f64);
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in sample {
        let b = ((v - lo) / width).floor();
        if b >= 0.0 && (b as usize) < HISTOGRAM_BINS {
            counts[b as usize] += 1;
        }
    }
    let total = sample.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let x = lo + (b as f64 + 0.5) * width;
            (x, c as f64 / (total * width), stats::normal_density(x, sd))
        })
        .collect()
}

/// KS distance of normalized sums of i.i.d. standard normals against `N(0,1)`:
/// the same pipeline fed an input whose answer is known.
pub fn clt_calibration(n: usize, cfg: &RunConfig) -> Result<f64, LimitsError> {
    let scale = 1.0 / (n as f64).sqrt();
    let sample = cfg.map_trials(|i| {
        let mut rng = trajectory_rng(cfg.seed, i);
        Ok((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).sum::<f64>() * scale)
    })?;
    Ok(stats::ks_distance(&sample, |x| stats::normal_cdf(x, 1.0)))
}

#[derive(Clone, Debug)]
pub struct LltReport {
    pub n: usize,
    pub trials: usize,
    pub interval: (f64, f64),
    pub kappa: f64,
    pub hits: usize,
    /// `sqrt n * P(S_n in I + kappa sqrt n)`.
    pub estimate: f64,
    /// Binomial standard error of `estimate`.
    pub stderr: f64,
    pub prediction: f64,
    /// Standard error of `prediction` from the uncertainty in `sigma2`.
    pub prediction_stderr: f64,
    pub relative_error: f64,
    /// Whether the 95% interval, widened by the prediction's own error, covers it.
    pub covered: bool,
    /// `Some(radii)` when the aperiodicity probe found no operator eigenvalue on the unit circle.
    pub aperiodicity_probe: Option<Vec<(f64, f64)>>,
    pub warning: Option<String>,
    pub pass: bool,
}

pub const LLT_TOLERANCE: f64 = 0.10;

/// Spectral radius of the perturbed operator on a coarse grid at a few `t != 0`.
pub fn aperiodicity_probe(psi: &Observable, ts: &[f64]) -> Result<Vec<(f64, f64)>, LimitsError> {
    let cfg = TransferConfig { grid: 12, rmax: 20, fiber_r: 2.0 };
    let (centered, _) = psi.centered()?;
    let asm = transfer::PerturbedAssembly::new(&centered, 4, &cfg)?;
    ts.iter()
        .map(|&t| {
            let op = asm.operator(t)?;
            Ok((t, transfer::spectral_radius(&op)?.radius))
        })
        .collect()
}

/// Counts of `S_n` in each interval of `intervals`, shifted by `kappa sqrt n`.
pub fn llt_counts(psi: &Observable, intervals: &[(f64, f64)], kappa: f64, n: usize, cfg: &RunConfig) -> Result<Vec<usize>, LimitsError> {
    for &(a, b) in intervals {
        if a > b {
            return Err(LimitsError::BadInterval(a, b));
        }
    }
    let (centered, _) = psi.centered()?;
    let modulus = cfg.modulus();
    let shift = kappa * (n as f64).sqrt();
    let sums = cfg.map_trials(|i| birkhoff(&centered, cfg.seed, i, n, modulus))?;
    Ok(intervals
        .iter()
        .map(|&(a, b)| sums.iter().filter(|&&s| s - shift >= a && s - shift <= b && a < b).count())
        .collect())
}

pub fn llt_test(psi: &Observable, interval: (f64, f64), kappa: f64, n: usize, cfg: &RunConfig) -> Result<LltReport, LimitsError> {
    let hits = llt_counts(psi, &[interval], kappa, n, cfg)?[0];
    let sigma = sigma_squared(psi, 60, &cfg.reseeded(2))?;
    if sigma.sigma2 <= 3.0 * sigma.stderr {
        return Err(LimitsError::Degenerate { sigma2: sigma.sigma2, stderr: sigma.stderr });
    }
    let trials = cfg.trials as f64;
    let root_n = (n as f64).sqrt();
    let p = hits as f64 / trials;
    let estimate = root_n * p;
    let stderr = root_n * (p * (1.0 - p) / trials).sqrt();
    let s = sigma.sigma2.sqrt();
    let length = interval.1 - interval.0;
    let prediction = length * (-kappa * kappa / (2.0 * sigma.sigma2)).exp() / (s * (2.0 * PI).sqrt());
    // d prediction / d sigma2 at kappa = 0 is -prediction / (2 sigma2); the kappa term adds kappa^2 / (2 sigma2^2).
    let dlog = (-0.5 + kappa * kappa / (2.0 * sigma.sigma2)) / sigma.sigma2;
    let prediction_stderr = (prediction * dlog).abs() * sigma.stderr;
    let relative_error = (estimate - prediction).abs() / prediction;
    let z = stats::normal_quantile(0.975);
    let covered = (estimate - prediction).abs() <= z * (stderr * stderr + prediction_stderr * prediction_stderr).sqrt();
    let probe = aperiodicity_probe(psi, &[0.1, 0.25, 0.5])?;
    let aperiodic = probe.iter().all(|&(_, r)| r < 1.0);
    Ok(LltReport {
        n,
        trials: cfg.trials,
        interval,
        kappa,
        hits,
        estimate,
        stderr,
        prediction,
        prediction_stderr,
        relative_error,
        covered,
        warning: (!aperiodic).then(|| "possibly periodic: operator probe found radius >= 1".to_string()),
        aperiodicity_probe: Some(probe),
        pass: relative_error < LLT_TOLERANCE && covered,
    })
}

#[derive(Clone, Debug)]
pub struct CharFnRow {
    pub n: usize,
    /// Monte Carlo `E[e^{i t S_n psi} f(T^n p) g(p)]`.
    pub estimate: Complex64,
    /// Standard error of `estimate` (real and imaginary parts combined).
    pub stderr: f64,
    /// `(1 - sigma2 t^2 / 2)^n (int f)(int g)`.
    pub prediction: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct CharFnReport {
    pub t: f64,
    pub sigma2: f64,
    pub rows: Vec<CharFnRow>,
    /// Deviations never grow by more than two combined standard errors.
    pub decreasing: bool,
}

pub fn char_function_probe(
    psi: &Observable,
    t: f64,
    n: usize,
    f: &Observable,
    g: &Observable,
    cfg: &RunConfig,
) -> Result<CharFnRow, LimitsError> {
    Ok(char_function_scan(psi, t, &[n], f, g, cfg)?.rows.remove(0))
}

/// All `n` from shared trajectories of length `max n`.
pub fn char_function_scan(
    psi: &Observable,
    t: f64,
    ns: &[usize],
    f: &Observable,
    g: &Observable,
    cfg: &RunConfig,
) -> Result<CharFnReport, LimitsError> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    if n_max as f64 * t * t > MAX_CHARFN_SPREAD {
        return Err(LimitsError::NoiseRegime(n_max as f64 * t * t));
    }
    let (centered, _) = psi.centered()?;
    let sigma2 = if t == 0.0 { 0.0 } else { sigma_squared(psi, 60, &cfg.reseeded(3))?.sigma2 };
    let (mf, mg) = (invariant_mean(f)?, invariant_mean(g)?);
    let modulus = cfg.modulus();
    let per_trial = cfg.map_trials(|i| {
        // Suffix sums from the far end: S_n = total - sum_{k >= n} psi_k.
        let mut suffix = 0.0;
        let mut at_n = vec![(0.0, 0.0); ns.len()];
        let mut g0 = 0.0;
        backward_path(cfg.seed, i, n_max, modulus, |k, x, w| {
            suffix += centered.eval(x, w);
            for (slot, &n) in at_n.iter_mut().zip(ns) {
                if k == n {
                    *slot = (suffix, f.eval(x, w));
                }
            }
            if k == 0 {
                g0 = g.eval(x, w);
            }
        })?;
        Ok(at_n.into_iter().map(|(from_n, fv)| Complex64::from_polar(fv * g0, t * (suffix - from_n))).collect::<Vec<_>>())
    })?;
    let trials = cfg.trials as f64;
    let rows: Vec<CharFnRow> = ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mean = per_trial.iter().fold(Complex64::new(0.0, 0.0), |a, v| a + v[j]) / trials;
            let var = per_trial.iter().map(|v| (v[j] - mean).norm_sqr()).fold(0.0, |a, b| a + b) / (trials - 1.0).max(1.0);
            let prediction = (1.0 - sigma2 * t * t / 2.0).powi(n as i32) * mf * mg;
            CharFnRow { n, estimate: mean, stderr: (var / trials).sqrt(), prediction, deviation: (mean - prediction).norm() }
        })
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].deviation <= w[0].deviation + 2.0 * (w[0].stderr.hypot(w[1].stderr)));
    Ok(CharFnReport { t, sigma2, rows, decreasing })
}
