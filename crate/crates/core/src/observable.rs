//! Observables on the skew-product phase space and their means under the
//! invariant measure `mu x Leb`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{farey_map, phi_unchecked, wrap};
use crate::minkowski::{MeasureNodeSet, MinkowskiError};

/// Fiber points used by the trapezoid rule in [`invariant_mean`].
const FIBER_POINTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("quadrature did not settle below {tol:e} (last change {last:e})")]
    NonConvergence { tol: f64, last: f64 },
    #[error("unknown observable {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Minkowski(#[from] MinkowskiError),
}

type EvalFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A bounded real function of `(x, omega)`.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub smoothness: String,
    /// Fiber modulus `log r` the observable is periodic for.
    pub modulus: f64,
    /// True when the observable was built as `f - f o T`.
    pub coboundary: bool,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("smoothness", &self.smoothness)
            .field("modulus", &self.modulus)
            .finish()
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        smoothness: impl Into<String>,
        modulus: f64,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Observable {
            name: name.into(),
            smoothness: smoothness.into(),
            modulus,
            coboundary: false,
            eval: Arc::new(eval),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, omega: f64) -> f64 {
        (self.eval)(x, omega)
    }

    /// `cos(2 pi omega / log r)`.
    pub fn fiber_cosine(r: f64) -> Self {
        let m = r.ln();
        Observable::new("cos", "analytic", m, move |_, w| (2.0 * PI * w / m).cos())
    }

    /// The smooth function whose coboundary [`Observable::coboundary`] uses.
    pub fn transfer_function(r: f64) -> Self {
        let m = r.ln();
        Observable::new("f", "analytic", m, move |x, w| {
            (1.0 + 0.5 * (2.0 * PI * x).sin()) * (2.0 * PI * w / m + 1.0).cos()
        })
    }

    /// `f - f o T` for the smooth `f` of [`Observable::transfer_function`].
    pub fn coboundary(r: f64) -> Self {
        let f = Observable::transfer_function(r);
        let m = f.modulus;
        let mut out = Observable::new("coboundary", "piecewise analytic", m, move |x, w| {
            f.eval(x, w) - f.eval(farey_map(x), wrap(w + phi_unchecked(x), m))
        });
        out.coboundary = true;
        out
    }

    pub fn constant(c: f64, r: f64) -> Self {
        Observable::new("const", "constant", r.ln(), move |_, _| c)
    }

    /// Smoothed indicator of `x <= 1/2`.
    pub fn smooth_step(r: f64) -> Self {
        Observable::new("step", "analytic", r.ln(), |x, _| 1.0 / (1.0 + ((x - 0.5) / 0.05).exp()))
    }

    /// Looks up one of the named observables above.
    pub fn by_name(name: &str, r: f64) -> Result<Self, ObservableError> {
        match name {
            "cos" => Ok(Observable::fiber_cosine(r)),
            "coboundary" => Ok(Observable::coboundary(r)),
            "step" => Ok(Observable::smooth_step(r)),
            "one" | "const" => Ok(Observable::constant(1.0, r)),
            other => Err(ObservableError::Unknown(other.to_string())),
        }
    }

    /// The observable minus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.clone();
        let mut out = Observable::new(format!("{}-centered", self.name), self.smoothness.clone(), self.modulus, move |x, w| {
            inner.eval(x, w) - c
        });
        out.coboundary = self.coboundary;
        out
    }

    /// The observable with its invariant mean removed; also returns that mean.
    pub fn centered(&self) -> Result<(Self, f64), ObservableError> {
        let mean = invariant_mean(self)?;
        Ok((self.shifted(mean), mean))
    }
}

fn tensor_rule(obs: &Observable, count: usize) -> Result<f64, ObservableError> {
    let nodes = MeasureNodeSet::on_mass_interval(0.0, 1.0, count)?;
    let step = obs.modulus / FIBER_POINTS as f64;
    Ok(nodes.integrate(|x| {
        (0..FIBER_POINTS).map(|l| obs.eval(x, l as f64 * step)).sum::<f64>() / FIBER_POINTS as f64
    }))
}

/// `int psi d(mu x Leb)`: equal-mass nodes in `x` (with one Richardson step)
/// times the trapezoid rule in the fiber, doubled until two successive
/// extrapolated values agree to `1e-10`.
pub fn invariant_mean(obs: &Observable) -> Result<f64, ObservableError> {
    invariant_mean_tol(obs, 1e-10)
}

pub fn invariant_mean_tol(obs: &Observable, tol: f64) -> Result<f64, ObservableError> {
    let mut coarse = tensor_rule(obs, 1 << 9)?;
    let mut fine = tensor_rule(obs, 1 << 10)?;
    let mut prev = 2.0 * fine - coarse;
    let mut last = f64::INFINITY;
    for p in 11..=18 {
        coarse = fine;
        fine = tensor_rule(obs, 1 << p)?;
        let est = 2.0 * fine - coarse;
        last = (est - prev).abs();
        if last < tol {
            return Ok(est);
        }
        prev = est;
    }
    Err(ObservableError::NonConvergence { tol, last })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_of_simple_observables() {
        assert!((invariant_mean(&Observable::constant(2.5, 2.0)).unwrap() - 2.5).abs() < 1e-12);
        assert!(invariant_mean(&Observable::fiber_cosine(2.0)).unwrap().abs() < 1e-12);
        // symmetric about 1/2: the smoothed step has mean 1/2
        let s = invariant_mean(&Observable::smooth_step(2.0)).unwrap();
        assert!((s - 0.5).abs() < 1e-10, "{s}");
    }

    #[test]
    fn coboundary_has_zero_mean() {
        let m = invariant_mean(&Observable::coboundary(2.0)).unwrap();
        assert!(m.abs() < 1e-9, "{m}");
    }

    #[test]
    fn centering() {
        let (c, mean) = Observable::constant(3.0, 2.0).centered().unwrap();
        assert!((mean - 3.0).abs() < 1e-12);
        assert!(c.eval(0.2, 0.1).abs() < 1e-12);
        assert!(Observable::by_name("nope", 2.0).is_err());
    }
}
