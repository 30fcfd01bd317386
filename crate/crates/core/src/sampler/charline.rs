//! Samplers along characteristic lines.
//!
//! * [`sample_char_line`] draws `X(w, z₀)` and `ΔY` jointly and assembles the
//!   `u₁` increment `e^{−a(w+z)/(2√2)}/2 · [(e^{−ah/2} − 1) X + e^{−ah/2} ΔY]`.
//! * [`sample_y_path`] draws `Y` from its independent increments.
//! * [`LineSampler`] draws the critically damped field exactly on a
//!   `z`-grid of a line `w = const`, in linear time. Along such a line
//!   `u(w, z) = e^{−at/2}/2 · M(z)` where `M` integrates `e^{a s/2}` over the
//!   backward quadrant, so `M` has independent increments.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::SQRT_2;

use super::exact::ExactSampler;
use super::export::FieldSample;
use super::rng::SeedSpec;
use crate::coords::{CharCoords, SpaceTimePoint};
use crate::covariance::{c0, cov_x, variance_critical};
use crate::error::{KgError, Result};
use crate::numerics::special::{phi1, phi2};

/// Joint draw of `X(w, z₀)` over a `w`-grid and `ΔY(h) = Y(z₀ + √2h) − Y(z₀)`
/// over an `h`-grid, with the resulting `u₁` increments.
#[derive(Debug, Clone)]
pub struct CharLineSample {
    pub z0: f64,
    pub t0: f64,
    pub w_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
    pub x_values: Vec<f64>,
    pub dy_values: Vec<f64>,
    /// `increments[i][k]` is the increment at `w_grid[i]`, `h_grid[k]`.
    pub increments: Vec<Vec<f64>>,
    pub seed: SeedSpec,
}

/// Coefficients `(α, β)` with `u₁ increment = α X + β ΔY` at `(w, z)` and scale `h`.
pub fn increment_coefficients(w: f64, z: f64, h: f64, a: f64) -> (f64, f64) {
    let outer = 0.5 * (-a * (w + z) / (2.0 * SQRT_2)).exp();
    (outer * (-0.5 * a * h).exp_m1(), outer * (-0.5 * a * h).exp())
}

/// Covariance of `(X(w_1, z₀), …, X(w_n, z₀), ΔY(h_1), …, ΔY(h_k))`.
/// `X` and the increments of `Y` beyond `z₀` are uncorrelated because their
/// noise regions are disjoint.
pub fn char_line_covariance(z0: f64, t0: f64, w_grid: &[f64], h_grid: &[f64], a: f64) -> DMatrix<f64> {
    let n = w_grid.len();
    let k = h_grid.len();
    let c = c0(t0, a);
    DMatrix::from_fn(n + k, n + k, |i, j| match (i < n, j < n) {
        (true, true) => cov_x(CharCoords::new(w_grid[i], z0), CharCoords::new(w_grid[j], z0), t0, a),
        (false, false) => c * SQRT_2 * h_grid[i - n].min(h_grid[j - n]),
        _ => 0.0,
    })
}

fn check_char_line(z0: f64, t0: f64, w_grid: &[f64], h_grid: &[f64]) -> Result<()> {
    if !(z0 > 0.0) {
        return Err(KgError::Precondition(format!("z0 must be positive, got {z0}")));
    }
    if !(t0 >= 0.0) {
        return Err(KgError::Precondition(format!("t0 must be non-negative, got {t0}")));
    }
    let w0 = SQRT_2 * t0;
    if let Some(w) = w_grid.iter().find(|&&w| w < w0 * (1.0 - 1e-12)) {
        return Err(KgError::Precondition(format!("w = {w} lies before w0 = √2·t0 = {w0}")));
    }
    let h_max = 0.5 * z0.min(1.0);
    if let Some(h) = h_grid.iter().find(|&&h| !(h > 0.0 && h <= h_max)) {
        return Err(KgError::Precondition(format!("h = {h} outside (0, min(z0, 1)/2 = {h_max}]")));
    }
    Ok(())
}

/// Samples `u₁` increments along the characteristic through `z₀`.
pub fn sample_char_line(z0: f64, t0: f64, w_grid: &[f64], h_grid: &[f64], a: f64, seed: SeedSpec) -> Result<CharLineSample> {
    check_char_line(z0, t0, w_grid, h_grid)?;
    let n = w_grid.len();
    let cov = char_line_covariance(z0, t0, w_grid, h_grid, a);
    let draw = ExactSampler::from_covariance(&cov)?.sample(seed);
    let (x_values, dy_values) = (draw[..n].to_vec(), draw[n..].to_vec());
    let increments = w_grid
        .iter()
        .zip(&x_values)
        .map(|(&w, &x)| {
            h_grid
                .iter()
                .zip(&dy_values)
                .map(|(&h, &dy)| {
                    let (alpha, beta) = increment_coefficients(w, z0, h, a);
                    alpha * x + beta * dy
                })
                .collect()
        })
        .collect();
    Ok(CharLineSample { z0, t0, w_grid: w_grid.to_vec(), h_grid: h_grid.to_vec(), x_values, dy_values, increments, seed })
}

/// Variance of the `u₁` increment implied by the joint law of `(X, ΔY)`.
pub fn char_increment_variance(w: f64, z0: f64, t0: f64, h: f64, a: f64) -> f64 {
    let (alpha, beta) = increment_coefficients(w, z0, h, a);
    let p = CharCoords::new(w, z0);
    alpha * alpha * cov_x(p, p, t0, a) + beta * beta * c0(t0, a) * SQRT_2 * h
}

/// `Y` on an increasing grid `z_grid ⊂ [0, ∞)`, built from independent
/// `N(0, C₀ Δz)` increments with `Y(0) = 0`. The points are reported on the
/// line `w = √2 t₀`.
pub fn sample_y_path(z_grid: &[f64], t0: f64, a: f64, seed: SeedSpec) -> Result<FieldSample> {
    if z_grid.first().is_some_and(|&z| z < 0.0) || z_grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(KgError::Precondition("z_grid must be increasing and non-negative".into()));
    }
    let c = c0(t0, a);
    let normals = seed.normals(z_grid.len());
    let mut prev = 0.0;
    let mut y = 0.0;
    let values = z_grid
        .iter()
        .zip(normals)
        .map(|(&z, g)| {
            y += (c * (z - prev)).sqrt() * g;
            prev = z;
            y
        })
        .collect();
    let w0 = SQRT_2 * t0;
    let points = z_grid.iter().map(|&z| CharCoords::new(w0, z).to_spacetime()).collect();
    Ok(FieldSample::new(points, values, seed, "y-path"))
}

/// Exact sampler of the critically damped field on a `z`-grid of the line
/// `w = const` (requires `w + z > 0` throughout).
#[derive(Debug, Clone)]
pub struct LineSampler {
    pub w: f64,
    pub z_grid: Vec<f64>,
    pub a: f64,
    /// Standard deviation of `M(z₀)` followed by those of its increments.
    sd: Vec<f64>,
    scale: Vec<f64>,
}

impl LineSampler {
    pub fn new(w: f64, z_grid: &[f64], a: f64) -> Result<Self> {
        if z_grid.is_empty() || z_grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(KgError::Precondition("z_grid must be non-empty and increasing".into()));
        }
        if w + z_grid[0] <= 0.0 {
            return Err(KgError::Precondition(format!("line starts at t ≤ 0 (w + z = {})", w + z_grid[0])));
        }
        let c = a / SQRT_2;
        let t_of = |z: f64| (w + z) / SQRT_2;
        let mut sd = Vec::with_capacity(z_grid.len());
        // Var M(z) = 4 e^{at} Var u(t, x)
        let t_first = t_of(z_grid[0]);
        sd.push((4.0 * (a * t_first).exp() * variance_critical(t_first, a)).sqrt());
        for pair in z_grid.windows(2) {
            let u1 = w + pair[0];
            let d = pair[1] - pair[0];
            let var = d * u1 * phi1(c * u1) + (c * u1).exp() * d * d * phi2(c * d);
            sd.push(var.sqrt());
        }
        let scale = z_grid.iter().map(|&z| 0.5 * (-0.5 * a * t_of(z)).exp()).collect();
        Ok(Self { w, z_grid: z_grid.to_vec(), a, sd, scale })
    }

    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    /// Field values at the grid points.
    pub fn sample_values(&self, seed: SeedSpec) -> Vec<f64> {
        let mut rng = seed.rng();
        let mut m = 0.0;
        self.sd
            .iter()
            .zip(&self.scale)
            .map(|(&sd, &scale)| {
                let g: f64 = StandardNormal.sample(&mut rng);
                m += sd * g;
                scale * m
            })
            .collect()
    }

    pub fn points(&self) -> Vec<SpaceTimePoint> {
        self.z_grid.iter().map(|&z| CharCoords::new(self.w, z).to_spacetime()).collect()
    }

    pub fn sample(&self, seed: SeedSpec) -> FieldSample {
        FieldSample::new(self.points(), self.sample_values(seed), seed, "line")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{exp_weighted_overlap, Band};
    use crate::covariance::cov_critical;

    /// Covariance of `u₁` (noise restricted to `s < t₀`) from the overlap integral.
    fn cov_u1(p: SpaceTimePoint, q: SpaceTimePoint, t0: f64, a: f64) -> f64 {
        let m = p.t.min(q.t).min(t0);
        0.25 * exp_weighted_overlap(&[Band::cone(p.t, p.x), Band::cone(q.t, q.x)], 0.0, m, a, -0.5 * a * (p.t + q.t))
    }

    #[test]
    fn zero_t0_gives_zero_increments() {
        let s = sample_char_line(1.0, 0.0, &[0.5, 1.0], &[0.01, 0.1], 1.0, SeedSpec::new(1, 0)).unwrap();
        assert!(s.increments.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn increment_variance_matches_two_point_covariance() {
        let (a, w0) = (0.8, 1.0);
        let t0 = w0 / SQRT_2;
        let z0 = 0.7;
        for &w in &[1.0, 1.4, 2.5] {
            for &h in &[0.3, 0.01, 1e-4] {
                let p = CharCoords::new(w, z0).to_spacetime();
                let q = p.shifted(h);
                let direct = cov_u1(q, q, t0, a) + cov_u1(p, p, t0, a) - 2.0 * cov_u1(p, q, t0, a);
                let formula = char_increment_variance(w, z0, t0, h, a);
                assert!((direct - formula).abs() < 1e-8 * formula, "w={w} h={h}: {direct} {formula}");
            }
        }
    }

    #[test]
    fn increment_variance_decreases_with_h() {
        let (a, t0, z0, w) = (1.0, 0.5, 0.8, 0.9);
        let vars: Vec<f64> = (1..20).map(|n| char_increment_variance(w, z0, t0, 0.5f64.powi(n), a)).collect();
        assert!(vars.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn preconditions() {
        assert!(sample_char_line(1.0, 0.5, &[0.1], &[0.1], 1.0, SeedSpec::new(1, 0)).is_err());
        assert!(sample_char_line(0.4, 0.5, &[1.0], &[0.3], 1.0, SeedSpec::new(1, 0)).is_err());
        assert!(sample_y_path(&[0.2, 0.1], 0.5, 1.0, SeedSpec::new(1, 0)).is_err());
    }

    #[test]
    fn y_path_starts_at_zero() {
        let s = sample_y_path(&[0.0, 0.5, 1.0], 0.5, 1.0, SeedSpec::new(5, 2)).unwrap();
        assert_eq!(s.values[0], 0.0);
    }

    #[test]
    fn line_sampler_covariance_matches_closed_form() {
        // the implied covariance Cov(u(z_i), u(z_j)) = s_i s_j Var M(z_min)
        let (w, a) = (0.4, 1.1);
        let z = [0.1, 0.35, 0.5, 1.2];
        let ls = LineSampler::new(w, &z, a).unwrap();
        let mut var_m = 0.0;
        let mut cum = vec![];
        for sd in &ls.sd {
            var_m += sd * sd;
            cum.push(var_m);
        }
        for i in 0..z.len() {
            for j in 0..z.len() {
                let implied = ls.scale[i] * ls.scale[j] * cum[i.min(j)];
                let p = CharCoords::new(w, z[i]).to_spacetime();
                let q = CharCoords::new(w, z[j]).to_spacetime();
                let exact = cov_critical(p, q, a);
                assert!((implied - exact).abs() < 1e-13, "{i} {j}: {implied} {exact}");
            }
        }
    }
}
