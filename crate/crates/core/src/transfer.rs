//! Twisted transfer operators of the return map to `Y`, discretized by
//! Chebyshev collocation, and the operators built from them: renewal blocks
//! by return time, their convolution powers, and the frequency-coupled
//! operator of a perturbation `e^{it psi}`.
//!
//! Fiber frequency `k` means the character `omega -> e^{i k s omega}` with
//! `s = 2 pi / log r`, so the twist is `e^{-i k s phi_Y}`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dynamics::{
    ensure_branch_convention, induced_psi, induced_psi_on_branch, BranchIndex, BranchOrbit,
    DynamicsError, Y_HI, Y_LO,
};
use crate::linalg::{self, CMatrix, CVector, LinalgError};
use crate::minkowski::{MeasureNodeSet, MinkowskiError};
use crate::observable::{Observable, ObservableError};

pub const DEFAULT_GRID: usize = 32;
pub const DEFAULT_RMAX: u32 = 40;
pub const MAX_T_STEPS: usize = 200;
pub const DEFAULT_T_CAP: f64 = 0.5;
/// Largest weighted Fourier tail tolerated when truncating the fiber band.
pub const BAND_TAIL_TOL: f64 = 1e-6;
/// Smallest distance from the tracked eigenvalue to the rest of the spectrum.
pub const TRACKING_GAP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("|z| = {0} exceeds the convergence radius 2^(1/4)")]
    Divergence(f64),
    #[error("rmax must be at least 5, got {0}")]
    RmaxTooSmall(u32),
    #[error("grid needs at least 4 nodes, got {0}")]
    GridTooSmall(usize),
    #[error("no branch has return time {0}")]
    EmptyBlock(u32),
    #[error("at most {max} steps, asked for {asked}")]
    TooManySteps { asked: usize, max: usize },
    #[error("fiber band too small: discarded Fourier mass {tail:e}")]
    BandTooSmall { tail: f64 },
    #[error("fiber sample count {0} must be a power of two at least 8 times the band")]
    BadSampleCount(usize),
    #[error("|t| = {t} exceeds the cap {cap}")]
    TCap { t: f64, cap: f64 },
    #[error("frequency band must be at least 4, got {0}")]
    FrequencyBand(usize),
    #[error("step h = {0} must lie in (0, 0.05]")]
    BadStep(f64),
    #[error("eigenvalue tracking lost at t = {t}: gap {gap:e}")]
    Tracking { t: f64, gap: f64 },
    #[error("eigenvector residual {residual:e} too large")]
    Residual { residual: f64 },
    #[error("fiber modulus requires r > 1, got {0}")]
    BadModulus(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Minkowski(#[from] MinkowskiError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

/// `sum_{n > rmax} (n-1) 2^{-n}`, the mass of branches dropped by truncation.
pub fn truncation_tail(rmax: u32) -> f64 {
    ((rmax + 1)..(rmax + 400)).map(|n| (n - 1) as f64 * 0.5f64.powi(n as i32)).sum()
}

/// `|z|` bound for the return-time weighted operators.
pub fn z_radius() -> f64 {
    2f64.powf(0.25)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferConfig {
    pub grid: usize,
    pub rmax: u32,
    /// Fiber circle is `R / (log r) Z`.
    pub fiber_r: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { grid: DEFAULT_GRID, rmax: DEFAULT_RMAX, fiber_r: 2.0 }
    }
}

impl TransferConfig {
    pub fn new(grid: usize, rmax: u32) -> Self {
        TransferConfig { grid, rmax, ..Default::default() }
    }

    pub fn modulus(&self) -> f64 {
        self.fiber_r.ln()
    }

    /// `2 pi / log r`.
    pub fn frequency_scale(&self) -> f64 {
        2.0 * PI / self.modulus()
    }

    fn validate(&self) -> Result<(), TransferError> {
        if self.grid < 4 {
            return Err(TransferError::GridTooSmall(self.grid));
        }
        if self.rmax < 5 {
            return Err(TransferError::RmaxTooSmall(self.rmax));
        }
        if !(self.fiber_r > 1.0) {
            return Err(TransferError::BadModulus(self.fiber_r));
        }
        Ok(())
    }
}

/// Chebyshev points of the first kind on `Y` with barycentric weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevGrid {
    nodes: Arc<Vec<f64>>,
    bary: Arc<Vec<f64>>,
}

impl ChebyshevGrid {
    pub fn new(g: usize) -> Result<Self, TransferError> {
        if g < 4 {
            return Err(TransferError::GridTooSmall(g));
        }
        let (mid, half) = (0.5 * (Y_LO + Y_HI), 0.5 * (Y_HI - Y_LO));
        let theta = |j: usize| (2 * j + 1) as f64 * PI / (2 * g) as f64;
        let nodes = (0..g).map(|j| mid + half * theta(j).cos()).collect();
        let bary = (0..g)
            .map(|j| if j % 2 == 0 { theta(j).sin() } else { -theta(j).sin() })
            .collect();
        Ok(ChebyshevGrid { nodes: Arc::new(nodes), bary: Arc::new(bary) })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values at `x` of the Lagrange cardinal functions.
    pub fn cardinal_row(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        if let Some(j) = self.nodes.iter().position(|&n| n == x) {
            row[j] = 1.0;
            return row;
        }
        let mut total = 0.0;
        for (j, (&n, &w)) in self.nodes.iter().zip(self.bary.iter()).enumerate() {
            let c = w / (x - n);
            row[j] = c;
            total += c;
        }
        row.iter_mut().for_each(|c| *c /= total);
        row
    }

    pub fn interpolate(&self, values: &[Complex64], x: f64) -> Complex64 {
        self.cardinal_row(x).iter().zip(values).map(|(&c, &v)| v * c).sum()
    }
}

/// Complex function on `Y` stored by its values at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: ChebyshevGrid,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn from_fn(grid: &ChebyshevGrid, f: impl Fn(f64) -> Complex64) -> Self {
        GridFunction { grid: grid.clone(), values: grid.nodes().iter().map(|&x| f(x)).collect() }
    }

    pub fn from_values(grid: &ChebyshevGrid, values: Vec<Complex64>) -> Self {
        assert_eq!(grid.len(), values.len());
        GridFunction { grid: grid.clone(), values }
    }

    pub fn constant(grid: &ChebyshevGrid, c: Complex64) -> Self {
        GridFunction { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn grid(&self) -> &ChebyshevGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn to_vector(&self) -> CVector {
        CVector::from_vec(self.values.clone())
    }
}

/// A discretized operator with the parameters it was built for.
#[derive(Clone, Debug)]
pub struct DiscretizedOperator {
    pub matrix: CMatrix,
    pub grid: ChebyshevGrid,
    pub truncation_rmax: u32,
    /// Fiber band `K`; zero for single-frequency operators.
    pub frequency_band: usize,
    pub k: i64,
    pub z: Complex64,
    pub t: f64,
    /// Branch mass dropped by truncating at `truncation_rmax`.
    pub tail: f64,
}

struct BranchSample {
    branch: BranchIndex,
    base: f64,
    point: f64,
    phi_y: f64,
    weight: f64,
    row: Vec<f64>,
}

/// Every inverse branch with `r <= rmax` evaluated at every grid node.
pub struct BranchTable {
    config: TransferConfig,
    grid: ChebyshevGrid,
    samples: Vec<Vec<BranchSample>>,
}

impl BranchTable {
    pub fn new(config: TransferConfig) -> Result<Self, TransferError> {
        config.validate()?;
        ensure_branch_convention()?;
        let grid = ChebyshevGrid::new(config.grid)?;
        let samples = grid
            .nodes()
            .par_iter()
            .map(|&x| {
                BranchIndex::up_to(config.rmax)
                    .map(|b| {
                        let orbit = BranchOrbit::new(b, x);
                        let point = orbit.points[0];
                        BranchSample {
                            branch: b,
                            base: x,
                            point,
                            phi_y: orbit.phi_sum(),
                            weight: 0.5f64.powi(b.return_time() as i32),
                            row: grid.cardinal_row(point),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(BranchTable { config, grid, samples })
    }

    pub fn config(&self) -> TransferConfig {
        self.config
    }

    pub fn grid(&self) -> &ChebyshevGrid {
        &self.grid
    }

    fn coefficient(&self, s: &BranchSample, k: i64, z: Complex64) -> Complex64 {
        let twist = Complex64::from_polar(1.0, -(k as f64) * self.config.frequency_scale() * s.phi_y);
        z.powu(s.branch.return_time()) * s.weight * twist
    }

    /// Collocation matrix of the operator restricted to return times in `times`.
    fn matrix_for(&self, k: i64, z: Complex64, times: impl Fn(u32) -> bool + Sync) -> CMatrix {
        let g = self.grid.len();
        let rows: Vec<Vec<Complex64>> = self
            .samples
            .par_iter()
            .map(|node| {
                let mut row = vec![Complex64::new(0.0, 0.0); g];
                for s in node.iter().filter(|s| times(s.branch.return_time())) {
                    let c = self.coefficient(s, k, z);
                    for (acc, &l) in row.iter_mut().zip(&s.row) {
                        *acc += c * l;
                    }
                }
                row
            })
            .collect();
        DMatrix::from_fn(g, g, |i, j| rows[i][j])
    }

    pub fn matrix(&self, k: i64, z: Complex64) -> CMatrix {
        self.matrix_for(k, z, |_| true)
    }

    /// Branches of return time exactly `n`, at `z = 1`.
    pub fn block(&self, n: u32, k: i64) -> CMatrix {
        self.matrix_for(k, Complex64::new(1.0, 0.0), |r| r == n)
    }

    /// Node values of the operator applied to `v`, interpolating `v` at branch points.
    pub fn apply(&self, k: i64, z: Complex64, v: &GridFunction) -> GridFunction {
        let values = self
            .samples
            .iter()
            .map(|node| node.iter().map(|s| self.coefficient(s, k, z) * v.eval(s.point)).sum())
            .collect();
        GridFunction { grid: self.grid.clone(), values }
    }

    fn operator(&self, matrix: CMatrix, k: i64, z: Complex64) -> DiscretizedOperator {
        DiscretizedOperator {
            matrix,
            grid: self.grid.clone(),
            truncation_rmax: self.config.rmax,
            frequency_band: 0,
            k,
            z,
            t: 0.0,
            tail: truncation_tail(self.config.rmax),
        }
    }
}

fn check_z(z: Complex64) -> Result<(), TransferError> {
    if z.norm() > z_radius() {
        return Err(TransferError::Divergence(z.norm()));
    }
    Ok(())
}

/// Operator applied to a function evaluated exactly at the branch points
/// (no interpolation), at an arbitrary `x` in `Y`.
pub fn transfer_at(
    k: i64,
    z: Complex64,
    x: f64,
    f: impl Fn(f64) -> Complex64,
    config: &TransferConfig,
) -> Result<Complex64, TransferError> {
    config.validate()?;
    check_z(z)?;
    let scale = config.frequency_scale();
    Ok(BranchIndex::up_to(config.rmax)
        .map(|b| {
            let orbit = BranchOrbit::new(b, x);
            let r = b.return_time();
            let twist = Complex64::from_polar(1.0, -(k as f64) * scale * orbit.phi_sum());
            z.powu(r) * 0.5f64.powi(r as i32) * twist * f(orbit.points[0])
        })
        .sum())
}

pub fn apply_transfer(
    k: i64,
    z: Complex64,
    v: &GridFunction,
    config: &TransferConfig,
) -> Result<GridFunction, TransferError> {
    check_z(z)?;
    let cfg = TransferConfig { grid: v.grid().len(), ..*config };
    let table = BranchTable::new(cfg)?;
    Ok(table.apply(k, z, v))
}

pub fn build_matrix(k: i64, z: Complex64, config: &TransferConfig) -> Result<DiscretizedOperator, TransferError> {
    check_z(z)?;
    let table = BranchTable::new(*config)?;
    Ok(table.operator(table.matrix(k, z), k, z))
}

pub fn renewal_block(n: u32, k: i64, config: &TransferConfig) -> Result<DiscretizedOperator, TransferError> {
    if n < 2 || n > config.rmax {
        return Err(TransferError::EmptyBlock(n));
    }
    let table = BranchTable::new(*config)?;
    let one = Complex64::new(1.0, 0.0);
    Ok(table.operator(table.block(n, k), k, one))
}

/// Blocks `R_1, ..., R_rmax` (with `R_1 = 0`) at fiber frequency `k`.
pub fn renewal_blocks(k: i64, config: &TransferConfig) -> Result<Vec<CMatrix>, TransferError> {
    let table = BranchTable::new(*config)?;
    let g = config.grid;
    Ok((1..=config.rmax)
        .map(|n| if n < 2 { CMatrix::zeros(g, g) } else { table.block(n, k) })
        .collect())
}

/// `T_0 = I`, `T_n = sum_{j=2}^{n} R_j T_{n-j}`.
pub fn t_sequence(k: i64, n_max: usize, config: &TransferConfig) -> Result<Vec<CMatrix>, TransferError> {
    if n_max > MAX_T_STEPS {
        return Err(TransferError::TooManySteps { asked: n_max, max: MAX_T_STEPS });
    }
    let blocks = renewal_blocks(k, config)?;
    let g = config.grid;
    let mut t: Vec<CMatrix> = vec![CMatrix::identity(g, g)];
    for n in 1..=n_max {
        let mut acc = CMatrix::zeros(g, g);
        for j in 2..=n.min(blocks.len()) {
            acc += &blocks[j - 1] * &t[n - j];
        }
        t.push(acc);
    }
    Ok(t)
}

#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub radius: f64,
    pub dominant: Complex64,
    /// Residual of the dominant eigenpair refined by inverse iteration.
    pub residual: f64,
    pub eigenvalues: Vec<Complex64>,
}

pub fn spectral_radius(op: &DiscretizedOperator) -> Result<SpectralReport, TransferError> {
    spectrum_of(&op.matrix)
}

pub(crate) fn spectrum_of(m: &CMatrix) -> Result<SpectralReport, TransferError> {
    let mut eigenvalues = linalg::eigenvalues(m)?;
    eigenvalues.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let dominant = eigenvalues[0];
    let pair = linalg::inverse_iteration(m, dominant, None, 3)?;
    let scale = linalg::spectral_norm(m).max(1e-300);
    if pair.residual > 1e-8 * scale.max(1.0) {
        return Err(TransferError::Residual { residual: pair.residual });
    }
    Ok(SpectralReport { radius: dominant.norm(), dominant, residual: pair.residual, eigenvalues })
}

/// Fiber Fourier coefficients `F_d`, `|d| <= band`, of `omega -> e^{i t psi_Y(x, omega)}` at each grid node.
#[derive(Clone, Debug)]
pub struct FourierCoefficientTable {
    pub t: f64,
    pub n_steps: u32,
    pub band: usize,
    /// `coefficients[d + band]`.
    pub coefficients: Vec<GridFunction>,
    /// Largest discarded mass `sum_{|d| > band} |F_d|^2` over nodes.
    pub tail_mass: f64,
}

impl FourierCoefficientTable {
    pub fn coefficient(&self, d: i64) -> Option<&GridFunction> {
        let idx = d + self.band as i64;
        if idx < 0 {
            return None;
        }
        self.coefficients.get(idx as usize)
    }
}

fn check_sample_count(m_omega: usize, band: usize) -> Result<(), TransferError> {
    if !m_omega.is_power_of_two() || m_omega < 8 * band.max(1) {
        return Err(TransferError::BadSampleCount(m_omega));
    }
    Ok(())
}

/// DFT of `e^{i t samples}`: the band `|d| <= band` and the discarded mass.
fn fiber_coefficients(
    fft: &Arc<dyn rustfft::Fft<f64>>,
    samples: &[f64],
    t: f64,
    band: usize,
) -> (Vec<Complex64>, f64) {
    let m = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::from_polar(1.0, t * s)).collect();
    fft.process(&mut buf);
    let inv = 1.0 / m as f64;
    let at = |d: i64| buf[d.rem_euclid(m as i64) as usize] * inv;
    let kept: Vec<Complex64> = (-(band as i64)..=band as i64).map(at).collect();
    let total: f64 = buf.iter().map(|c| (c * inv).norm_sqr()).sum();
    let kept_mass: f64 = kept.iter().map(|c| c.norm_sqr()).sum();
    (kept, (total - kept_mass).max(0.0))
}

pub fn fourier_table(
    psi: &Observable,
    t: f64,
    band: usize,
    m_omega: usize,
    config: &TransferConfig,
) -> Result<FourierCoefficientTable, TransferError> {
    config.validate()?;
    check_sample_count(m_omega, band)?;
    let grid = ChebyshevGrid::new(config.grid)?;
    let modulus = config.modulus();
    let fft = FftPlanner::new().plan_fft_forward(m_omega);
    let mut columns = vec![Vec::with_capacity(grid.len()); 2 * band + 1];
    let mut tail_mass = 0.0f64;
    for &x in grid.nodes() {
        let samples = (0..m_omega)
            .map(|l| induced_psi(|p, w| psi.eval(p, w), x, l as f64 * modulus / m_omega as f64, modulus))
            .collect::<Result<Vec<_>, _>>()?;
        let (kept, tail) = fiber_coefficients(&fft, &samples, t, band);
        tail_mass = tail_mass.max(tail);
        for (col, c) in columns.iter_mut().zip(kept) {
            col.push(c);
        }
    }
    if tail_mass > BAND_TAIL_TOL {
        return Err(TransferError::BandTooSmall { tail: tail_mass });
    }
    Ok(FourierCoefficientTable {
        t,
        n_steps: 1,
        band,
        coefficients: columns.into_iter().map(|v| GridFunction::from_values(&grid, v)).collect(),
        tail_mass,
    })
}

/// Cached fiber samples of `psi_Y` at every branch point, reused across `t`.
pub struct PerturbedAssembly {
    table: BranchTable,
    band: usize,
    m_omega: usize,
    /// `psi_samples[node][branch][l]`.
    psi_samples: Vec<Vec<Vec<f64>>>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    pub t_cap: f64,
}

impl PerturbedAssembly {
    pub fn new(psi: &Observable, band: usize, config: &TransferConfig) -> Result<Self, TransferError> {
        if band < 4 {
            return Err(TransferError::FrequencyBand(band));
        }
        let table = BranchTable::new(*config)?;
        let m_omega = (16 * band).next_power_of_two().max(64);
        let modulus = config.modulus();
        let psi_samples = table
            .samples
            .par_iter()
            .map(|node| {
                node.iter()
                    .map(|s| {
                        let orbit = BranchOrbit::new(s.branch, s.base);
                        (0..m_omega)
                            .map(|l| {
                                let w = l as f64 * modulus / m_omega as f64;
                                induced_psi_on_branch(|p, w| psi.eval(p, w), &orbit, w, modulus)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m_omega);
        Ok(PerturbedAssembly { table, band, m_omega, psi_samples, fft, t_cap: DEFAULT_T_CAP })
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn dimension(&self) -> usize {
        (2 * self.band + 1) * self.table.grid.len()
    }

    pub fn fiber_samples(&self) -> usize {
        self.m_omega
    }

    /// Per node and branch, `F_d` for `|d| <= 2 band`; fails when the weighted
    /// discarded mass exceeds [`BAND_TAIL_TOL`].
    fn coefficients(&self, t: f64) -> Result<Vec<Vec<Vec<Complex64>>>, TransferError> {
        let coupling = 2 * self.band;
        let mut worst = 0.0f64;
        let mut out = Vec::with_capacity(self.psi_samples.len());
        for (node, samples) in self.table.samples.iter().zip(&self.psi_samples) {
            let mut weighted_tail = 0.0;
            let per_branch = node
                .iter()
                .zip(samples)
                .map(|(s, smp)| {
                    let (kept, tail) = fiber_coefficients(&self.fft, smp, t, coupling);
                    weighted_tail += s.weight * tail;
                    kept
                })
                .collect();
            worst = worst.max(weighted_tail);
            out.push(per_branch);
        }
        if worst > BAND_TAIL_TOL {
            return Err(TransferError::BandTooSmall { tail: worst });
        }
        Ok(out)
    }

    /// Blocks `(k, l)`, `|k|, |l| <= band`, of `v -> L_k(F_{k-l} v)` for the
    /// branches whose return time passes `times`.
    fn assemble(&self, t: f64, times: impl Fn(u32) -> bool) -> Result<CMatrix, TransferError> {
        if t.abs() > self.t_cap {
            return Err(TransferError::TCap { t, cap: self.t_cap });
        }
        let coeffs = self.coefficients(t)?;
        let g = self.table.grid.len();
        let kb = self.band as i64;
        let coupling = 2 * kb;
        let dim = self.dimension();
        let mut m = CMatrix::zeros(dim, dim);
        let scale = self.table.config.frequency_scale();
        for (node_idx, node) in self.table.samples.iter().enumerate() {
            for (b_idx, s) in node.iter().enumerate() {
                if !times(s.branch.return_time()) {
                    continue;
                }
                let f = &coeffs[node_idx][b_idx];
                for k in -kb..=kb {
                    let twist = Complex64::from_polar(s.weight, -(k as f64) * scale * s.phi_y);
                    let row = (k + kb) as usize * g + node_idx;
                    for l in -kb..=kb {
                        let c = twist * f[(k - l + coupling) as usize];
                        if c.norm_sqr() == 0.0 {
                            continue;
                        }
                        let col0 = (l + kb) as usize * g;
                        for (j, &lj) in s.row.iter().enumerate() {
                            m[(row, col0 + j)] += c * lj;
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn operator(&self, t: f64) -> Result<DiscretizedOperator, TransferError> {
        let matrix = self.assemble(t, |_| true)?;
        Ok(DiscretizedOperator {
            matrix,
            grid: self.table.grid.clone(),
            truncation_rmax: self.table.config.rmax,
            frequency_band: self.band,
            k: 0,
            z: Complex64::new(1.0, 0.0),
            t,
            tail: truncation_tail(self.table.config.rmax),
        })
    }

    /// The perturbed operator split by return time: `R^t_1, ..., R^t_rmax`.
    pub fn renewal_blocks(&self, t: f64) -> Result<Vec<CMatrix>, TransferError> {
        (1..=self.table.config.rmax).map(|n| self.assemble(t, |r| r == n)).collect()
    }
}

pub fn perturbed_operator(
    psi: &Observable,
    t: f64,
    band: usize,
    config: &TransferConfig,
) -> Result<DiscretizedOperator, TransferError> {
    PerturbedAssembly::new(psi, band, config)?.operator(t)
}

/// Eigenvalue `lambda(1, t)` followed from `t = 0` and the curvature fitted from it.
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    /// Fitted coefficient of `t^2` in `lambda(1,0) - lambda(1,t)`.
    pub alpha: f64,
    /// `(t, lambda(1,t))` along the tracked branch, starting at `t = 0`.
    pub path: Vec<(f64, Complex64)>,
    /// Largest `|lambda(-t) - conj(lambda(t))|`.
    pub conjugate_error: f64,
    /// Smallest distance from the tracked eigenvalue to the rest of the spectrum.
    pub min_gap: f64,
    /// Invariant mean removed from `psi`.
    pub mean_removed: f64,
    /// Second difference quotients at `h` and `2h`.
    pub quotients: (f64, f64),
}

/// Eigenvalue nearest `prev`, refined by inverse iteration from `seed`, with
/// the gap to the remaining spectrum.
fn track(
    m: &CMatrix,
    prev: Complex64,
    seed: Option<&CVector>,
    t: f64,
) -> Result<(Complex64, CVector, f64), TransferError> {
    let ev = linalg::eigenvalues(m)?;
    let (idx, _) = ev
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - prev).norm().partial_cmp(&(b.1 - prev).norm()).unwrap())
        .ok_or(LinalgError::Empty)?;
    let chosen = ev[idx];
    let gap = ev
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .map(|(_, z)| (z - chosen).norm())
        .fold(f64::INFINITY, f64::min);
    if gap < TRACKING_GAP {
        return Err(TransferError::Tracking { t, gap });
    }
    let pair = linalg::inverse_iteration(m, chosen, seed, 4)?;
    if (pair.value - chosen).norm() > 0.5 * gap {
        return Err(TransferError::Tracking { t, gap: (pair.value - chosen).norm() });
    }
    Ok((pair.value, pair.vector, gap))
}

/// Follows `lambda(1, t)` over `t = 0, +-h, +-2h` and fits the curvature by a
/// Richardson step on symmetric second differences.
pub fn lambda_curvature(
    psi: &Observable,
    h: f64,
    band: usize,
    config: &TransferConfig,
) -> Result<CurvatureReport, TransferError> {
    if !(h > 0.0 && h <= 0.05) {
        return Err(TransferError::BadStep(h));
    }
    let (centered, mean) = psi.centered()?;
    let asm = PerturbedAssembly::new(&centered, band, config)?;
    let m0 = asm.operator(0.0)?.matrix;
    let (l0, v0, gap0) = track(&m0, Complex64::new(1.0, 0.0), None, 0.0)?;
    let mut path = vec![(0.0, l0)];
    let mut min_gap = gap0;
    let mut values = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (side, sign) in [1.0f64, -1.0].into_iter().enumerate() {
        let (mut prev, mut vec) = (l0, v0.clone());
        for (step, mult) in [1.0, 2.0].into_iter().enumerate() {
            let t = sign * mult * h;
            let m = asm.operator(t)?.matrix;
            let (l, v, gap) = track(&m, prev, Some(&vec), t)?;
            min_gap = min_gap.min(gap);
            path.push((t, l));
            values[side][step] = l;
            prev = l;
            vec = v;
        }
    }
    let conjugate_error = (0..2)
        .map(|s| (values[1][s] - values[0][s].conj()).norm())
        .fold(0.0, f64::max);
    let quotient = |s: usize, tt: f64| ((l0 - values[0][s]).re + (l0 - values[1][s]).re) / (2.0 * tt * tt);
    let (q1, q2) = (quotient(0, h), quotient(1, 2.0 * h));
    Ok(CurvatureReport {
        alpha: (4.0 * q1 - q2) / 3.0,
        path,
        conjugate_error,
        min_gap,
        mean_removed: mean,
        quotients: (q1, q2),
    })
}

/// `lambda(1, t)` followed from `t = 0` through `ts`, which must start at 0
/// and move in steps of at most `0.05`.
pub fn lambda_path(
    psi: &Observable,
    ts: &[f64],
    band: usize,
    config: &TransferConfig,
) -> Result<Vec<(f64, Complex64)>, TransferError> {
    if ts.first() != Some(&0.0) {
        return Err(TransferError::BadStep(ts.first().copied().unwrap_or(f64::NAN)));
    }
    if let Some(w) = ts.windows(2).find(|w| !((w[1] - w[0]).abs() <= 0.05)) {
        return Err(TransferError::BadStep(w[1] - w[0]));
    }
    let (centered, _) = psi.centered()?;
    let asm = PerturbedAssembly::new(&centered, band, config)?;
    let mut prev = Complex64::new(1.0, 0.0);
    let mut vec: Option<CVector> = None;
    let mut path = Vec::with_capacity(ts.len());
    for &t in ts {
        let m = asm.operator(t)?.matrix;
        let (l, v, _) = track(&m, prev, vec.as_ref(), t)?;
        path.push((t, l));
        prev = l;
        vec = Some(v);
    }
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct DecayRow {
    pub k: i64,
    /// Fitted per-step factor of the `L^4(mu_Y)` norm.
    pub factor: f64,
    /// `log` of the norm after each step, starting from the constant 1.
    pub log_norms: Vec<f64>,
}

/// Decay of `|L_k^n 1|` in `L^4(mu_Y)`, a proxy for the cone-norm contraction.
#[derive(Clone, Debug)]
pub struct DecayProbe {
    pub rows: Vec<DecayRow>,
    /// Largest factor over the nonzero frequencies probed.
    pub sup_factor: f64,
    pub label: &'static str,
}

/// Nodes for the `L^4(mu_Y)` norm of interpolated grid values.
const NORM_NODES: usize = 512;

pub fn dolgopyat_decay_probe(
    k_list: &[i64],
    steps: usize,
    config: &TransferConfig,
) -> Result<DecayProbe, TransferError> {
    let table = BranchTable::new(*config)?;
    let quad = MeasureNodeSet::on_mass_interval(0.25, 0.5, NORM_NODES)?;
    let interp = CMatrix::from_fn(quad.len(), table.grid.len(), |q, j| {
        Complex64::new(table.grid.cardinal_row(quad.nodes[q])[j], 0.0)
    });
    let l4 = |v: &CVector| -> f64 {
        let vals = &interp * v;
        vals.iter().zip(&quad.weights).map(|(c, w)| w * c.norm_sqr().powi(2)).sum::<f64>().powf(0.25)
    };
    let one = Complex64::new(1.0, 0.0);
    let rows = k_list
        .par_iter()
        .map(|&k| {
            let m = table.matrix(k, one);
            let mut v = CVector::from_element(table.grid.len(), one);
            let mut log_norms = vec![l4(&v).ln()];
            let mut acc = 0.0;
            for _ in 0..steps {
                v = &m * &v;
                let norm = l4(&v);
                acc += norm.ln();
                log_norms.push(acc);
                // Renormalize to stay clear of underflow; the log carries the scale.
                v /= Complex64::new(norm, 0.0);
            }
            let from = steps / 2;
            let slope = crate::stats::linear_fit(
                &(from..=steps).map(|n| n as f64).collect::<Vec<_>>(),
                &log_norms[from..],
            )
            .slope;
            DecayRow { k, factor: slope.exp(), log_norms }
        })
        .collect::<Vec<_>>();
    let sup_factor = rows.iter().filter(|r| r.k != 0).map(|r| r.factor).fold(0.0, f64::max);
    Ok(DecayProbe { rows, sup_factor, label: "proxy: L4(mu_Y) norm of node values" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::return_data;
    use crate::minkowski::integrate_mu_y;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    /// Random smooth real function `sum a_k cos(c_k x + b_k)`.
    fn random_smooth(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 + Clone {
        let terms: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..12.0), rng.gen_range(0.0..6.0)))
            .collect();
        move |x| terms.iter().map(|(a, c, b)| a * (c * x + b).cos()).sum()
    }

    #[test]
    fn tail_values() {
        assert!(truncation_tail(40) < 1e-10);
        assert!((truncation_tail(1) - 1.0).abs() < 1e-12);
        assert!((truncation_tail(2) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_converges() {
        let f = |x: f64| re((7.0 * x).sin() + x * x);
        let mut prev = f64::INFINITY;
        for g in [8, 16, 32] {
            let grid = ChebyshevGrid::new(g).unwrap();
            let gf = GridFunction::from_fn(&grid, f);
            for &x in grid.nodes() {
                assert_eq!(gf.eval(x), f(x));
            }
            let err = (0..97)
                .map(|i| {
                    let x = Y_LO + (Y_HI - Y_LO) * (i as f64 + 0.5) / 97.0;
                    (gf.eval(x) - f(x)).norm()
                })
                .fold(0.0, f64::max);
            assert!(err < prev || err < 1e-13);
            prev = err;
        }
        assert!(prev < 1e-13);
        assert!(ChebyshevGrid::new(3).is_err());
    }

    #[test]
    fn fixes_constants_up_to_tail() {
        let cfg = TransferConfig::default();
        let grid = ChebyshevGrid::new(cfg.grid).unwrap();
        let out = apply_transfer(0, one(), &GridFunction::constant(&grid, one()), &cfg).unwrap();
        for v in out.values() {
            assert!((v - one()).norm() < 1e-10);
        }
    }

    #[test]
    fn z_weighted_constant_is_geometric_series() {
        let cfg = TransferConfig::default();
        let grid = ChebyshevGrid::new(cfg.grid).unwrap();
        for z in [0.3, 0.5, 0.9] {
            let out = apply_transfer(0, re(z), &GridFunction::constant(&grid, one()), &cfg).unwrap();
            let h = z / 2.0;
            let closed = h * h / ((1.0 - h) * (1.0 - h));
            for v in out.values() {
                assert!((v.re - closed).abs() < truncation_tail(cfg.rmax) + 1e-10);
            }
        }
        assert!(matches!(
            apply_transfer(0, re(1.3), &GridFunction::constant(&grid, one()), &cfg),
            Err(TransferError::Divergence(_))
        ));
        assert!(build_matrix(0, one(), &TransferConfig::new(8, 4)).is_err());
    }

    #[test]
    fn invariance_of_mu_y() {
        let cfg = TransferConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let v = random_smooth(&mut rng);
            let lhs = integrate_mu_y(1 << 15, |x| transfer_at(0, one(), x, |y| re(v(y)), &cfg).unwrap().re).unwrap();
            let rhs = integrate_mu_y(1 << 15, &v).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} {rhs}");
        }
    }

    #[test]
    fn duality_with_return_map() {
        // Left side: L_0 v from backward branch points on mu_Y nodes.
        // Right side: equal-mass nodes inside each branch's own mass interval,
        // pushed forward by the return map. Both truncate at the same rmax.
        let rmax = 30;
        let rule = |ua: f64, ub: f64, n: usize| {
            let fine = MeasureNodeSet::on_mass_interval(ua, ub, n).unwrap();
            let coarse = MeasureNodeSet::on_mass_interval(ua, ub, n / 2).unwrap();
            let scale = (ub - ua) / 0.25;
            let mut pts: Vec<(f64, f64)> = fine.nodes.iter().zip(&fine.weights).map(|(&x, &w)| (x, 2.0 * w * scale)).collect();
            pts.extend(coarse.nodes.iter().zip(&coarse.weights).map(|(&x, &w)| (x, -w * scale)));
            pts
        };
        let left: Vec<(f64, f64, Vec<(f64, f64)>)> = rule(0.25, 0.5, 1 << 14)
            .into_iter()
            .map(|(x, w)| {
                let pre = BranchIndex::up_to(rmax)
                    .map(|b| (BranchOrbit::new(b, x).points[0], 0.5f64.powi(b.return_time() as i32)))
                    .collect();
                (x, w, pre)
            })
            .collect();
        let right: Vec<(f64, f64, f64)> = BranchIndex::up_to(rmax)
            .flat_map(|b| {
                let (lo, hi) = b.interval_exact();
                let ua = crate::minkowski::question_mark(&lo).unwrap().to_f64();
                let ub = crate::minkowski::question_mark(&hi).unwrap().to_f64();
                rule(ua, ub, 8192)
            })
            .map(|(x, w)| (x, w, return_data(x).unwrap().image))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let v = random_smooth(&mut rng);
            let w = random_smooth(&mut rng);
            let lhs: f64 = left
                .iter()
                .map(|(x, wt, pre)| wt * w(*x) * pre.iter().map(|(y, m)| m * v(*y)).sum::<f64>())
                .sum();
            let rhs: f64 = right.iter().map(|(x, wt, image)| wt * v(*x) * w(*image)).sum();
            assert!((lhs - rhs).abs() < 1e-7, "{lhs} {rhs}");
        }
    }

    #[test]
    fn matrix_agrees_with_apply() {
        let cfg = TransferConfig { grid: 16, rmax: 20, fiber_r: 2.0 };
        let grid = ChebyshevGrid::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [0, 1, -2] {
            let op = build_matrix(k, Complex64::new(0.8, 0.1), &cfg).unwrap();
            for _ in 0..10 {
                let v = GridFunction::from_values(
                    &grid,
                    (0..16).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
                );
                let direct = apply_transfer(k, Complex64::new(0.8, 0.1), &v, &cfg).unwrap();
                let mv = &op.matrix * v.to_vector();
                for (a, b) in direct.values().iter().zip(mv.iter()) {
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perron_eigenvalue() {
        let op = build_matrix(0, one(), &TransferConfig::default()).unwrap();
        let rep = spectral_radius(&op).unwrap();
        assert!((rep.radius - 1.0).abs() < 1e-6);
        let pair = linalg::inverse_iteration(&op.matrix, rep.dominant, None, 5).unwrap();
        let phase = pair.vector[0] / pair.vector[0].norm();
        assert!(pair.vector.iter().all(|c| (c / phase).re > 0.0 && (c / phase).im.abs() < 1e-10));
    }

    #[test]
    fn half_weight_eigenvalue_is_one_ninth() {
        let op = build_matrix(0, re(0.5), &TransferConfig::default()).unwrap();
        let rep = spectral_radius(&op).unwrap();
        assert!((rep.dominant - re(1.0 / 9.0)).norm() < 1e-8);
    }

    #[test]
    fn blocks_partition_the_operator() {
        let cfg = TransferConfig { grid: 12, rmax: 20, fiber_r: 2.0 };
        for k in [0, 2] {
            let full = build_matrix(k, one(), &cfg).unwrap().matrix;
            let blocks = renewal_blocks(k, &cfg).unwrap();
            let sum = blocks.iter().fold(CMatrix::zeros(12, 12), |a, b| a + b);
            assert!((full - sum).norm() < 1e-13);
            for (idx, b) in blocks.iter().enumerate() {
                let n = idx + 1;
                let mass = if n < 2 { 0.0 } else { (n - 1) as f64 * 0.5f64.powi(n as i32) };
                for i in 0..12 {
                    let rs: Complex64 = b.row(i).iter().sum();
                    if k == 0 {
                        assert!((rs.re - mass).abs() < 1e-14);
                    }
                    assert!(rs.norm() <= mass * (1.0 + 1e-12) + 1e-15);
                }
            }
        }
        assert!(matches!(renewal_block(1, 0, &cfg), Err(TransferError::EmptyBlock(1))));
    }

    #[test]
    fn generating_identity() {
        let cfg = TransferConfig { grid: 12, rmax: 40, fiber_r: 2.0 };
        let grid = ChebyshevGrid::new(12).unwrap();
        let v = GridFunction::from_fn(&grid, |x| Complex64::new((3.0 * x).cos(), x));
        for k in [0, 1, 3] {
            let blocks = renewal_blocks(k, &cfg).unwrap();
            for z in [0.3, 0.7, 0.9] {
                let series = blocks
                    .iter()
                    .enumerate()
                    .fold(CVector::zeros(12), |acc, (i, b)| acc + b * v.to_vector() * re(z).powu(i as u32 + 1));
                let direct = apply_transfer(k, re(z), &v, &cfg).unwrap();
                for (a, b) in series.iter().zip(direct.values()) {
                    assert!((a - b).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn twist_covariance() {
        let cfg = TransferConfig { grid: 12, rmax: 30, fiber_r: 2.0 };
        let grid = ChebyshevGrid::new(12).unwrap();
        let s = cfg.frequency_scale();
        for k in [1, 4] {
            let lk = apply_transfer(k, one(), &GridFunction::constant(&grid, one()), &cfg).unwrap();
            for (&x, &v) in grid.nodes().iter().zip(lk.values()) {
                let pulled = transfer_at(0, one(), x, |y| {
                    Complex64::from_polar(1.0, -(k as f64) * s * return_data(y).unwrap().phi_sum)
                }, &cfg)
                .unwrap();
                assert!((pulled - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn t_sequence_examples() {
        let cfg = TransferConfig { grid: 8, rmax: 20, fiber_r: 2.0 };
        let t = t_sequence(0, 8, &cfg).unwrap();
        assert_eq!(t[1], CMatrix::zeros(8, 8));
        let r = renewal_blocks(0, &cfg).unwrap();
        let expect = &r[3] + &r[1] * &r[1];
        assert!((&t[4] - expect).norm() < 1e-12);
        // explicit compositions of return times summing to n
        fn paths(n: usize, r: &[CMatrix]) -> CMatrix {
            let g = r[0].nrows();
            if n == 0 {
                return CMatrix::identity(g, g);
            }
            (1..=n.min(r.len())).fold(CMatrix::zeros(g, g), |acc, j| acc + &r[j - 1] * paths(n - j, r))
        }
        for n in 0..=8 {
            assert!((&t[n] - paths(n, &r)).norm() < 1e-12, "n={n}");
        }
        assert!(t_sequence(0, 201, &cfg).is_err());
    }

    #[test]
    fn fourier_table_examples() {
        let cfg = TransferConfig { grid: 8, rmax: 20, fiber_r: 2.0 };
        let psi = Observable::fiber_cosine(2.0);
        let zero = fourier_table(&psi, 0.0, 4, 64, &cfg).unwrap();
        for d in -4..=4 {
            for v in zero.coefficient(d).unwrap().values() {
                let expect = if d == 0 { 1.0 } else { 0.0 };
                assert!((v - re(expect)).norm() < 1e-14);
            }
        }
        // Nodes near 1/2 have long excursions, so psi_Y is large there and t is kept small.
        let tab = fourier_table(&psi, 0.02, 12, 128, &cfg).unwrap();
        let mirror = fourier_table(&psi, -0.02, 12, 128, &cfg).unwrap();
        let modulus = cfg.modulus();
        let s = cfg.frequency_scale();
        for (m, &x) in ChebyshevGrid::new(8).unwrap().nodes().iter().enumerate() {
            let mut parseval = 0.0;
            for d in -12i64..=12 {
                let f = tab.coefficient(d).unwrap().values()[m];
                let g = mirror.coefficient(-d).unwrap().values()[m];
                assert!((f - g.conj()).norm() < 1e-14);
                parseval += f.norm_sqr();
                // Independent quadrature of the defining integral with 1000 points.
                let n = 1000;
                let direct: Complex64 = (0..n)
                    .map(|l| {
                        let w = (l as f64 + 0.5) * modulus / n as f64;
                        let val = induced_psi(|p, w| psi.eval(p, w), x, w, modulus).unwrap();
                        Complex64::from_polar(1.0, 0.02 * val - d as f64 * s * w)
                    })
                    .sum::<Complex64>()
                    / n as f64;
                assert!((direct - f).norm() < 1e-10, "d={d} {direct} {f}");
            }
            assert!(parseval <= 1.0 + 1e-12);
        }
        assert!(matches!(fourier_table(&psi, 0.3, 6, 40, &cfg), Err(TransferError::BadSampleCount(40))));
        assert!(matches!(fourier_table(&psi, 8.0, 1, 8, &cfg), Err(TransferError::BandTooSmall { .. })));
    }

    #[test]
    fn perturbed_operator_at_zero_is_block_diagonal() {
        let cfg = TransferConfig { grid: 10, rmax: 20, fiber_r: 2.0 };
        let psi = Observable::fiber_cosine(2.0);
        let op = perturbed_operator(&psi, 0.0, 4, &cfg).unwrap();
        let g = 10;
        for k in -4i64..=4 {
            for l in -4i64..=4 {
                let blk = op.matrix.view(((k + 4) as usize * g, (l + 4) as usize * g), (g, g)).into_owned();
                if k == l {
                    let lk = build_matrix(k, one(), &cfg).unwrap().matrix;
                    assert!((blk - lk).norm() < 1e-13);
                } else {
                    assert!(blk.norm() < 1e-12);
                }
            }
        }
        let rep = spectral_radius(&op).unwrap();
        assert!((rep.dominant - one()).norm() < 2.0 * truncation_tail(20));
        assert!(matches!(perturbed_operator(&psi, 0.6, 4, &cfg), Err(TransferError::TCap { .. })));
        assert!(matches!(perturbed_operator(&psi, 0.1, 3, &cfg), Err(TransferError::FrequencyBand(3))));
    }

    #[test]
    fn band_truncation_is_stable() {
        let cfg = TransferConfig { grid: 10, rmax: 20, fiber_r: 2.0 };
        let psi = Observable::fiber_cosine(2.0);
        let small = PerturbedAssembly::new(&psi, 4, &cfg).unwrap();
        let large = PerturbedAssembly::new(&psi, 8, &cfg).unwrap();
        for t in [0.05, 0.2] {
            let a = track(&small.operator(t).unwrap().matrix, one(), None, t).unwrap().0;
            let b = track(&large.operator(t).unwrap().matrix, one(), None, t).unwrap().0;
            assert!((a - b).norm() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn curvature_is_real_and_conjugate_symmetric() {
        let cfg = TransferConfig { grid: 10, rmax: 20, fiber_r: 2.0 };
        let rep = lambda_curvature(&Observable::fiber_cosine(2.0), 0.05, 4, &cfg).unwrap();
        assert!(rep.alpha > 0.0);
        assert!(rep.conjugate_error < 1e-10);
        assert!(rep.path.iter().skip(1).all(|(_, l)| l.re < rep.path[0].1.re));
        assert!(lambda_curvature(&Observable::fiber_cosine(2.0), 0.1, 4, &cfg).is_err());

        let path = lambda_path(&Observable::fiber_cosine(2.0), &[0.0, 0.05, 0.1], 4, &cfg).unwrap();
        assert_eq!(path[0].1, rep.path[0].1);
        assert!((path[1].1 - rep.path[1].1).norm() < 1e-10);
        assert!(lambda_path(&Observable::fiber_cosine(2.0), &[0.0, 0.2], 4, &cfg).is_err());
    }

    #[test]
    fn decay_probe_small() {
        let cfg = TransferConfig { grid: 16, rmax: 30, fiber_r: 2.0 };
        let probe = dolgopyat_decay_probe(&[0, 1, -1], 40, &cfg).unwrap();
        assert!((probe.rows[0].factor - 1.0).abs() < 1e-3);
        assert!(probe.rows[1].factor < 1.0);
        assert!((probe.rows[1].factor - probe.rows[2].factor).abs() < 1e-10);
    }
}
