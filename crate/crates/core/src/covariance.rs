//! Second moments of the solution field, its increments and the auxiliary
//! processes `X`, `Y` that appear along a characteristic.
//!
//! Under critical damping every covariance is an exponentially weighted
//! light-cone overlap and is evaluated in closed form through [`crate::cone`].
//! General `(a, m)` goes through the spatial Fourier representation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use crate::cone::{exp_weighted_overlap, Band, Linear};
use crate::coords::{CharCoords, SpaceTimePoint};
use crate::error::{KgError, Result};
use crate::kernels::ModelParams;
use crate::numerics::quadrature::{integrate, GaussLegendre};
use crate::numerics::special::{cphi1, fourier_tail, phi1, phi_v, sinc, sinhc};

/// Default tolerance of [`cov_spectral`], relative to the covariance scale.
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-8;

/// Relative eigenvalue cut-off (times the trace) of the pseudo-inverse used
/// for degenerate conditioning.
pub const PSEUDO_INVERSE_RTOL: f64 = 1e-12;

/// Covariance of the critically damped field (kernel `e^{-at/2}/2 · 1{|x|<t}`).
pub fn cov_critical(p: SpaceTimePoint, q: SpaceTimePoint, a: f64) -> f64 {
    let m = p.t.min(q.t);
    if !(m > 0.0) {
        return 0.0;
    }
    let bands = [Band::cone(p.t, p.x), Band::cone(q.t, q.x)];
    0.25 * exp_weighted_overlap(&bands, 0.0, m, a, -0.5 * a * (p.t + q.t))
}

/// Variance of the critically damped field at time `t`: `½∫₀ᵗ r e^{-ar} dr`.
pub fn variance_critical(t: f64, a: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        0.5 * t * t * phi_v(-a * t)
    }
}

/// Covariance for general `(a, m)` with the default tolerance.
pub fn cov_spectral(p: SpaceTimePoint, q: SpaceTimePoint, params: &ModelParams) -> Result<f64> {
    cov_spectral_with_tol(p, q, params, DEFAULT_SPECTRAL_TOL).map(|e| e.value)
}

/// Value of a spectral covariance together with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub error: f64,
    /// Frequency cut-off at which the analytic tail took over.
    pub cutoff: f64,
}

/// `(1/2π)∫₀^{t∧t'}∫ Ĝ(t−s,ξ)Ĝ(t'−s,ξ)cos(ξ(x−x')) dξ ds`.
///
/// The `s`-integral is done in closed form for every `ξ`, so only the
/// frequency integral is numerical. It runs up to a cut-off `Ξ` on panels
/// of half an oscillation period, and `[Ξ, ∞)` is integrated analytically
/// from the large-`ξ` expansion of the integrand, leaving an `O(Ξ⁻³)`
/// remainder. `Ξ` is doubled until two successive estimates agree within
/// `tol` times the scale `max(|cov|, √(v(t)v(t')))`, where `v` is the
/// variance of the critically damped field with the same `a`.
pub fn cov_spectral_with_tol(
    p: SpaceTimePoint,
    q: SpaceTimePoint,
    params: &ModelParams,
    tol: f64,
) -> Result<SpectralEstimate> {
    for pt in [p, q] {
        if !(0.0..=params.horizon).contains(&pt.t) {
            return Err(KgError::Domain(format!("t = {} outside [0, {}]", pt.t, params.horizon)));
        }
    }
    if p.t.min(q.t) == 0.0 {
        return Ok(SpectralEstimate { value: 0.0, error: 0.0, cutoff: 0.0 });
    }
    let pair = SpectralPair::new(p, q, params);
    let dx = (p.x - q.x).abs();
    let freq = pair.sigma1 + dx;
    let width = PI / freq;
    let reference = (variance_critical(p.t, params.a) * variance_critical(q.t, params.a)).sqrt();
    let boundary = params.k_squared().sqrt();

    let integrand = |xi: f64| pair.h(xi) * (xi * dx).cos();
    let segment = |lo: f64, hi: f64, abs_tol: f64| {
        let n = ((hi - lo) / width).ceil() as usize;
        let mut breaks: Vec<f64> = (1..n).map(|i| lo + i as f64 * width).collect();
        breaks.push(boundary);
        integrate(integrand, lo, hi, &breaks, abs_tol, 0.0, 4 * (n + 2))
    };

    let mut cutoff = (16.0 * freq.max(1.0)).max(4.0 * boundary).max(32.0);
    let quad_tol = 0.05 * tol * reference * PI;
    let first = segment(0.0, cutoff, quad_tol);
    let mut body = first.value;
    let mut body_err = first.error;
    let mut previous = (body + pair.tail(cutoff, dx)) / PI;
    const MAX_CUTOFF: f64 = 1.1e6;
    while cutoff < MAX_CUTOFF {
        let next = segment(cutoff, 2.0 * cutoff, quad_tol);
        body += next.value;
        body_err += next.error;
        cutoff *= 2.0;
        let current = (body + pair.tail(cutoff, dx)) / PI;
        let diff = (current - previous).abs();
        let target = tol * current.abs().max(reference);
        let error = diff + body_err / PI;
        if error <= target {
            return Ok(SpectralEstimate { value: current, error, cutoff });
        }
        previous = current;
    }
    Err(KgError::ToleranceNotMet {
        estimate: previous,
        error_bound: (previous - (body + pair.tail(cutoff, dx)) / PI).abs() + body_err / PI,
        requested: tol * previous.abs().max(reference),
    })
}

/// Per-pair constants of the frequency integrand `H(ξ)`.
struct SpectralPair {
    a: f64,
    b: f64,
    d: f64,
    sigma0: f64,
    sigma1: f64,
    t: f64,
    t2: f64,
    m: f64,
    a0: f64,
    e0: f64,
    e1: f64,
    rule: GaussLegendre,
}

impl SpectralPair {
    fn new(p: SpaceTimePoint, q: SpaceTimePoint, params: &ModelParams) -> Self {
        let a = params.a;
        let d = p.t - q.t;
        let sigma0 = d.abs();
        let sigma1 = p.t + q.t;
        let len = sigma1 - sigma0;
        Self {
            a,
            b: params.discriminant(),
            d,
            sigma0,
            sigma1,
            t: p.t,
            t2: q.t,
            m: p.t.min(q.t),
            // ½∫_{σ0}^{σ1} e^{-aσ/2} dσ
            a0: 0.5 * (-0.5 * a * sigma0).exp() * len * phi1(-0.5 * a * len),
            e0: (-0.5 * a * sigma0).exp(),
            e1: (-0.5 * a * sigma1).exp(),
            rule: GaussLegendre::new(32),
        }
    }

    /// `∫_{σ0}^{σ1} e^{rσ} dσ`
    fn exp_integral(&self, r: f64) -> f64 {
        let len = self.sigma1 - self.sigma0;
        (r * self.sigma0).exp() * len * phi1(r * len)
    }

    /// `H(ξ) = ∫₀^{t∧t'} Ĝ(t−s,ξ) Ĝ(t'−s,ξ) ds`.
    fn h(&self, xi: f64) -> f64 {
        let k2 = xi * xi - self.b;
        if k2 > 0.0 {
            let k = k2.sqrt();
            if k * self.sigma1 < 1.0 {
                return self.h_direct(k2);
            }
            let len = self.sigma1 - self.sigma0;
            let z = Complex64::new(-0.5 * self.a, k);
            let a1 = 0.5 * ((z * self.sigma0).exp() * cphi1(z * len) * len).re;
            ((k * self.d).cos() * self.a0 - a1) / (2.0 * k2)
        } else if k2 < 0.0 {
            let q = (-k2).sqrt();
            if q * self.sigma1 < 1.0 {
                return self.h_direct(k2);
            }
            let b1 = 0.25 * (self.exp_integral(-0.5 * self.a + q) + self.exp_integral(-0.5 * self.a - q));
            (b1 - (q * self.d).cosh() * self.a0) / (-2.0 * k2)
        } else {
            self.h_direct(0.0)
        }
    }

    /// Gauss-Legendre in `s` on the product of the two kernels; used where
    /// the closed form above would cancel.
    fn h_direct(&self, k2: f64) -> f64 {
        let shape = |r: f64| {
            if k2 >= 0.0 {
                r * sinc(k2.sqrt() * r)
            } else {
                r * sinhc((-k2).sqrt() * r)
            }
        };
        let (a, t, t2) = (self.a, self.t, self.t2);
        self.rule
            .integrate(|s| (-0.5 * a * (t + t2 - 2.0 * s)).exp() * shape(t - s) * shape(t2 - s), 0.0, self.m)
    }

    /// `∫_Ξ^∞ H_asym(ξ) cos(ξ Δx) dξ` for the expansion
    /// `A0 cos(Dξ)/(2ξ²) − A0 D κ sin(Dξ)/(4ξ³) − (E1 sin σ1ξ − E0 sin σ0ξ)/(4ξ³)`, `κ = −b`.
    fn tail(&self, cutoff: f64, dx: f64) -> f64 {
        let cos2 = |w: f64| 0.5 * (fourier_tail(w + dx, 2, cutoff).re + fourier_tail(w - dx, 2, cutoff).re);
        let sin3 = |w: f64| 0.5 * (fourier_tail(w + dx, 3, cutoff).im + fourier_tail(w - dx, 3, cutoff).im);
        let kappa = -self.b;
        0.5 * self.a0 * cos2(self.d) - 0.25 * self.a0 * self.d * kappa * sin3(self.d)
            - 0.25 * (self.e1 * sin3(self.sigma1) - self.e0 * sin3(self.sigma0))
    }
}

/// Covariance for any parameters: closed form when critical, spectral otherwise.
pub fn covariance(p: SpaceTimePoint, q: SpaceTimePoint, params: &ModelParams) -> Result<f64> {
    if params.is_critical() {
        Ok(cov_critical(p, q, params.a))
    } else {
        cov_spectral(p, q, params)
    }
}

/// `Var u(p)`.
pub fn variance(p: SpaceTimePoint, params: &ModelParams) -> Result<f64> {
    if params.is_critical() {
        Ok(variance_critical(p.t, params.a))
    } else {
        covariance(p, p, params)
    }
}

/// `E[(u(p) − u(q))²]`.
pub fn increment_moment(p: SpaceTimePoint, q: SpaceTimePoint, params: &ModelParams) -> Result<f64> {
    if p == q {
        return Ok(0.0);
    }
    let v = variance(p, params)? + variance(q, params)? - 2.0 * covariance(p, q, params)?;
    Ok(v.max(0.0))
}

/// `E[|u(t,x) − u(s,x)|²]`, the time-increment specialization.
pub fn time_increment_moment(t: f64, s: f64, x: f64, params: &ModelParams) -> Result<f64> {
    increment_moment(SpaceTimePoint::new(t, x), SpaceTimePoint::new(s, x), params)
}

/// `E[|u(t,x) − u(t,y)|²]`, the space-increment specialization.
pub fn space_increment_moment(t: f64, x: f64, y: f64, params: &ModelParams) -> Result<f64> {
    increment_moment(SpaceTimePoint::new(t, x), SpaceTimePoint::new(t, y), params)
}

/// Second moment of the rectangular increment, computed by both routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectIncrement {
    /// From the 4×4 covariance matrix contracted with `(1, −1, −1, 1)`.
    pub combination: f64,
    /// From the disjoint-region decomposition; the more accurate of the two.
    pub regions: f64,
}

impl RectIncrement {
    pub fn value(&self) -> f64 {
        self.regions
    }

    pub fn relative_gap(&self) -> f64 {
        (self.combination - self.regions).abs() / self.regions.abs().max(f64::MIN_POSITIVE)
    }
}

/// The four corners `(t,x)`, `(t−ε₁/√2, x+ε₁/√2)`, `(t−ε₂/√2, x−ε₂/√2)`,
/// `(t−(ε₁+ε₂)/√2, x+(ε₁−ε₂)/√2)`; in characteristic coordinates they are
/// `(w,z)`, `(w−ε₁,z)`, `(w,z−ε₂)`, `(w−ε₁,z−ε₂)`.
pub fn rect_corners(t: f64, x: f64, eps1: f64, eps2: f64) -> [SpaceTimePoint; 4] {
    let c = CharCoords::from(SpaceTimePoint::new(t, x));
    [
        SpaceTimePoint::new(t, x),
        CharCoords::new(c.w - eps1, c.z).to_spacetime(),
        CharCoords::new(c.w, c.z - eps2).to_spacetime(),
        CharCoords::new(c.w - eps1, c.z - eps2).to_spacetime(),
    ]
}

/// `E[(u(t,x) − u(p₁) − u(p₂) + u(p₁₂))²]` for the critically damped field
/// with damping `params.a`.
///
/// The integrand of the increment is `1_{R̃₁₂} − c₁1_{R₁} − c₂1_{R₂} + c₁c₂1_{R₁₂}`
/// with `cᵢ = e^{aεᵢ/(2√2)} − 1` over four disjoint regions, so its square
/// integrates region by region.
pub fn rect_increment_moment(t: f64, x: f64, eps1: f64, eps2: f64, params: &ModelParams) -> Result<RectIncrement> {
    if !(eps1 > 0.0 && eps2 > 0.0 && eps1 < t && eps2 < t) {
        return Err(KgError::Precondition(format!("need 0 < eps1, eps2 < t; got eps1 = {eps1}, eps2 = {eps2}, t = {t}")));
    }
    let a = params.a;
    let corners = rect_corners(t, x, eps1, eps2);
    let signs = [1.0, -1.0, -1.0, 1.0];
    let mut combination = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            combination += signs[i] * signs[j] * cov_critical(corners[i], corners[j], a);
        }
    }

    let c = CharCoords::from(corners[0]);
    let (w, z) = (c.w, c.z);
    // y-bands in (s, y) for the char-coordinate slabs and quadrants
    let w_slab = Band::new(Linear::new(-SQRT_2 * w, 1.0), Linear::new(-SQRT_2 * (w - eps1), 1.0));
    let z_slab = Band::new(Linear::new(SQRT_2 * (z - eps2), -1.0), Linear::new(SQRT_2 * z, -1.0));
    let quadrant = |wp: f64, zp: f64| Band::new(Linear::new(-SQRT_2 * wp, 1.0), Linear::new(SQRT_2 * zp, -1.0));
    let c1 = (a * eps1 / (2.0 * SQRT_2)).exp_m1();
    let c2 = (a * eps2 / (2.0 * SQRT_2)).exp_m1();
    let region = |bands: &[Band]| exp_weighted_overlap(bands, 0.0, t, a, -a * t);
    let regions = 0.25
        * (region(&[w_slab, z_slab])
            + c1 * c1 * region(&[quadrant(w - eps1, z), z_slab])
            + c2 * c2 * region(&[w_slab, quadrant(w, z - eps2)])
            + (c1 * c2).powi(2) * region(&[quadrant(w - eps1, z - eps2)]));
    Ok(RectIncrement { combination, regions })
}

/// `σ_tt − σ_tc Σ_cc⁺ σ_ct` with an eigenvalue pseudo-inverse cut at
/// [`PSEUDO_INVERSE_RTOL`] times the trace of `Σ_cc`.
pub fn schur_complement(sigma_tt: f64, sigma_tc: &DVector<f64>, sigma_cc: &DMatrix<f64>) -> f64 {
    if sigma_tc.is_empty() {
        return sigma_tt;
    }
    let cutoff = PSEUDO_INVERSE_RTOL * sigma_cc.trace().abs();
    let eig = SymmetricEigen::new(sigma_cc.clone());
    let proj = eig.eigenvectors.transpose() * sigma_tc;
    let explained: f64 = proj
        .iter()
        .zip(eig.eigenvalues.iter())
        .filter(|(_, &l)| l > cutoff)
        .map(|(&c, &l)| c * c / l)
        .sum();
    (sigma_tt - explained).max(0.0)
}

/// `Var(u(target) | u(c₁), …, u(cₙ))` for points on one characteristic
/// segment `{w = const}` with every conditioner no later than the target.
pub fn conditional_variance(target: SpaceTimePoint, conditioners: &[SpaceTimePoint], params: &ModelParams) -> Result<f64> {
    let w0 = target.to_char().w;
    for c in conditioners {
        let w = c.to_char().w;
        if (w - w0).abs() > 1e-9 * (1.0 + w0.abs()) {
            return Err(KgError::Precondition(format!("conditioner {c:?} is off the segment w = {w0}")));
        }
        if c.t > target.t + 1e-12 {
            return Err(KgError::Precondition(format!("conditioner {c:?} is later than the target")));
        }
    }
    let n = conditioners.len();
    let sigma_tt = variance(target, params)?;
    let mut sigma_tc = DVector::zeros(n);
    let mut sigma_cc = DMatrix::zeros(n, n);
    for i in 0..n {
        sigma_tc[i] = covariance(target, conditioners[i], params)?;
        for j in 0..=i {
            let v = covariance(conditioners[i], conditioners[j], params)?;
            sigma_cc[(i, j)] = v;
            sigma_cc[(j, i)] = v;
        }
    }
    Ok(schur_complement(sigma_tt, &sigma_tc, &sigma_cc))
}

/// `C₀ = √2 ∫₀^{t₀} e^{as} ds = √2 (e^{at₀} − 1)/a`, with limit `√2 t₀` at `a = 0`.
pub fn c0(t0: f64, a: f64) -> f64 {
    if t0 <= 0.0 {
        0.0
    } else {
        SQRT_2 * t0 * phi1(a * t0)
    }
}

/// `Cov(Y(z), Y(z')) = C₀ min(z, z')`.
pub fn cov_y(z: f64, z2: f64, t0: f64, a: f64) -> f64 {
    c0(t0, a) * z.min(z2).max(0.0)
}

/// `Cov(X(w,z), X(w',z')) = ∫₀^{t₀ ∧ s*} e^{as} (√2(z∧z' + w∧w') − 2s)₊ ds`.
pub fn cov_x(p: CharCoords, q: CharCoords, t0: f64, a: f64) -> f64 {
    let reach = p.z.min(q.z) + p.w.min(q.w);
    if reach <= 0.0 || t0 <= 0.0 {
        return 0.0;
    }
    let len0 = SQRT_2 * reach;
    let u = t0.min(reach / SQRT_2);
    len0 * u * phi1(a * u) - 2.0 * u * u * phi_v(a * u)
}

/// `Cov(X(w,z), Y(z'))`; equals `cov_y(z, z')` whenever `w ≥ √2 t₀`.
pub fn cov_xy(p: CharCoords, z2: f64, t0: f64, a: f64) -> f64 {
    if t0 <= 0.0 {
        return 0.0;
    }
    let bands = [
        Band::new(Linear::new(-SQRT_2 * p.w, 1.0), Linear::new(SQRT_2 * p.z, -1.0)),
        Band::new(Linear::new(0.0, -1.0), Linear::new(SQRT_2 * z2, -1.0)),
    ];
    exp_weighted_overlap(&bands, 0.0, t0, a, 0.0)
}

/// A point list with its covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub points: Vec<SpaceTimePoint>,
    pub entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Assembles the matrix in parallel over rows.
    pub fn assemble(points: &[SpaceTimePoint], params: &ModelParams) -> Result<Self> {
        let n = points.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..=i).map(|j| covariance(points[i], points[j], params)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut entries = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Ok(Self { points: points.to_vec(), entries })
    }

    pub fn eigenvalue_range(&self) -> (f64, f64) {
        if self.entries.is_empty() {
            return (0.0, 0.0);
        }
        let ev = SymmetricEigen::new(self.entries.clone()).eigenvalues;
        (ev.min(), ev.max())
    }

    /// Row-major CSV; the header lists the points as `t:x`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.points.iter().map(|p| format!("{}:{}", p.t, p.x)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.entries.nrows() {
            let row: Vec<String> = (0..self.entries.ncols()).map(|j| format!("{:e}", self.entries[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}
