//! Fundamental solutions of the damped Klein-Gordon operator
//! `∂²_t u + a ∂_t u − ∂²_x u + m² u` in one space dimension.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::numerics::special::{moment, sinc, sinhc};

/// Absolute tolerance on `a²/4 − m²` below which the regime is tagged critical.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Below this value of `|ξ| t` the space-time transform replaces the
/// difference quotient in `ξ` by its Taylor expansion around the midpoint.
pub const TRANSFORM_SERIES_THRESHOLD: f64 = 1e-3;

/// Spectral regime of the operator, decided by the sign of `a²/4 − m²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `a²/4 < m²`: every frequency oscillates.
    Oscillatory,
    /// `a²/4 = m²`: the kernel collapses to a weighted light-cone indicator.
    Critical,
    /// `a²/4 > m²`: frequencies with `ξ² < a²/4 − m²` are overdamped.
    Mixed,
}

/// Damping `a`, mass `m` and time horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    pub m: f64,
    pub horizon: f64,
}

impl ModelParams {
    pub fn new(a: f64, m: f64, horizon: f64) -> Result<Self> {
        let p = Self { a, m, horizon };
        p.validate()?;
        Ok(p)
    }

    /// Critically damped parameters `m = a/2`.
    pub fn critical(a: f64, horizon: f64) -> Result<Self> {
        Self::new(a, 0.5 * a, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(KgError::invalid("T", format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(KgError::invalid("a", format!("damping must be non-negative, got {}", self.a)));
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(KgError::invalid("m", format!("mass must be non-negative, got {}", self.m)));
        }
        Ok(())
    }

    /// `a²/4 − m²`, the drift coefficient of the reduced equation.
    pub fn discriminant(&self) -> f64 {
        0.25 * self.a * self.a - self.m * self.m
    }

    pub fn regime(&self) -> Regime {
        regime(self)
    }

    pub fn is_critical(&self) -> bool {
        self.regime() == Regime::Critical
    }

    /// Squared boundary frequency `K² = max(a²/4 − m², 0)` of the overdamped band.
    pub fn k_squared(&self) -> f64 {
        self.discriminant().max(0.0)
    }
}

pub fn regime(params: &ModelParams) -> Regime {
    let d = params.discriminant();
    if d.abs() <= CRITICAL_TOLERANCE {
        Regime::Critical
    } else if d > 0.0 {
        Regime::Mixed
    } else {
        Regime::Oscillatory
    }
}

/// `Ĝ(t, ξ)` without the horizon check; `t ≥ 0` is assumed.
#[inline]
pub fn green_hat(t: f64, xi: f64, a: f64, m: f64) -> f64 {
    let d = xi * xi + m * m - 0.25 * a * a;
    let damp = (-0.5 * a * t).exp();
    if d > 0.0 {
        damp * t * sinc(t * d.sqrt())
    } else if d < 0.0 {
        damp * t * sinhc(t * (-d).sqrt())
    } else {
        damp * t
    }
}

/// Spatial Fourier transform of the fundamental solution.
///
/// Both branches are written as `t e^{-at/2} sinc(t r)` (or `sinhc`), so the
/// boundary `ξ² = a²/4 − m²` is the removable limit `t e^{-at/2}`.
pub fn fourier_green(t: f64, xi: f64, params: &ModelParams) -> Result<f64> {
    if !(0.0..=params.horizon).contains(&t) {
        return Err(KgError::Domain(format!("t = {t} outside [0, {}]", params.horizon)));
    }
    Ok(green_hat(t, xi, params.a, params.m))
}

/// Critical-damping kernel `Γ(t, x) = e^{-at/2}/2 · 1{|x| < t}`.
#[inline]
pub fn critical_kernel(t: f64, x: f64, a: f64) -> f64 {
    if t > 0.0 && x.abs() < t {
        0.5 * (-0.5 * a * t).exp()
    } else {
        0.0
    }
}

/// `f(t, z) = (e^{tz} − 1)/z`.
fn f_t(t: f64, z: Complex64) -> Complex64 {
    moment(0, z * t) * t
}

/// Space-time Fourier transform of `s ↦ Γ(t − s, x − ·) 1_{[0,t]}(s)`.
///
/// The bracket `[f(t, z₊) − f(t, z₋)]/(2i|ξ|)` is a divided difference of
/// width `2|ξ|` around `z₀ = iτ − a/2`; for `|ξ| t` below
/// [`TRANSFORM_SERIES_THRESHOLD`] it is evaluated from `∂ᵏf(t, z₀)`.
pub fn spacetime_transform(t: f64, x: f64, tau: f64, xi: f64, a: f64) -> Result<Complex64> {
    if !(a > 0.0) {
        return Err(KgError::Domain(format!("space-time transform needs a > 0, got {a}")));
    }
    if t < 0.0 {
        return Err(KgError::Domain(format!("negative time {t}")));
    }
    let eps = xi.abs();
    let z0 = Complex64::new(-0.5 * a, tau);
    let quotient = if eps * t < TRANSFORM_SERIES_THRESHOLD {
        // (f(z0+iε) − f(z0−iε)) / (2iε) = f' − ε² f'''/6 + ε⁴ f⁽⁵⁾/120
        let w = z0 * t;
        let d1 = moment(1, w) * t.powi(2);
        let d3 = moment(3, w) * t.powi(4);
        let d5 = moment(5, w) * t.powi(6);
        d1 - d3 * (eps * eps / 6.0) + d5 * (eps.powi(4) / 120.0)
    } else {
        let zp = z0 + Complex64::new(0.0, eps);
        let zm = z0 - Complex64::new(0.0, eps);
        (f_t(t, zp) - f_t(t, zm)) / Complex64::new(0.0, 2.0 * eps)
    };
    Ok(Complex64::from_polar(1.0, -t * tau + x * xi) * quotient)
}
