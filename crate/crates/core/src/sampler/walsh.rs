//! Discretized Walsh integral `u(t,x) ≈ Σ w_ij ΔW_ij` for the critically
//! damped kernel on a rectangular noise grid.
//!
//! `w_ij` is the cell average of `Γ(t − s, x − y)`, computed exactly from the
//! cone-cell overlap. Cells fully inside the cone share one weight per row,
//! so a probe is evaluated from row prefix sums plus a few boundary cells.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::export::FieldSample;
use super::rng::SeedSpec;
use crate::cone::{exp_weighted_overlap, Band};
use crate::coords::SpaceTimePoint;
use crate::error::{KgError, Result};
use crate::numerics::special::phi1;

/// Noise cells `[iΔs, (i+1)Δs) × [y_min + jΔy, y_min + (j+1)Δy)`, `i < ns`, `j < ny`.
/// A periodic grid identifies `y` modulo `ny·Δy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_step: f64,
    pub y_step: f64,
    pub y_min: f64,
    pub ns: usize,
    pub ny: usize,
    pub periodic: bool,
}

impl GridSpec {
    /// The smallest step-aligned grid covering the backward cones of `points`.
    pub fn covering(points: &[SpaceTimePoint], s_step: f64, y_step: f64) -> Self {
        let t_max = points.iter().map(|p| p.t).fold(0.0, f64::max);
        let lo = points.iter().map(|p| p.x - p.t).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.x + p.t).fold(f64::NEG_INFINITY, f64::max);
        let j0 = (lo / y_step).floor() - 1.0;
        let j1 = (hi / y_step).ceil() + 1.0;
        Self {
            s_step,
            y_step,
            y_min: j0 * y_step,
            ns: (t_max / s_step).ceil() as usize,
            ny: (j1 - j0) as usize,
            periodic: false,
        }
    }

    /// A periodic grid of `ny` cells of width `y_step` starting at `y = 0`.
    pub fn periodic(s_step: f64, y_step: f64, ns: usize, ny: usize) -> Self {
        Self { s_step, y_step, y_min: 0.0, ns, ny, periodic: true }
    }

    pub fn period(&self) -> f64 {
        self.ny as f64 * self.y_step
    }

    pub fn cells(&self) -> usize {
        self.ns * self.ny
    }

    pub fn check_coverage(&self, p: SpaceTimePoint) -> Result<()> {
        let slack = 1e-12 * (1.0 + p.t.abs() + p.x.abs());
        if p.t > self.ns as f64 * self.s_step + slack {
            return Err(KgError::Coverage(format!("t = {} beyond the last noise row", p.t)));
        }
        if self.periodic {
            if 2.0 * p.t >= self.period() {
                return Err(KgError::Coverage(format!("cone of {p:?} wraps around the period {}", self.period())));
            }
        } else if p.x - p.t < self.y_min - slack || p.x + p.t > self.y_min + self.ny as f64 * self.y_step + slack {
            return Err(KgError::Coverage(format!("light cone of {p:?} exits the noise grid")));
        }
        Ok(())
    }

    fn wrap(&self, j: i64) -> Option<usize> {
        if self.periodic {
            Some(j.rem_euclid(self.ny as i64) as usize)
        } else if j >= 0 && (j as usize) < self.ny {
            Some(j as usize)
        } else {
            None
        }
    }
}

/// A realization of space-time white noise integrated over grid cells:
/// independent `N(0, Δs·Δy)` entries, row-major in `s`.
#[derive(Debug, Clone)]
pub struct NoiseGrid {
    pub spec: GridSpec,
    pub cells: Vec<f64>,
    prefix: Vec<f64>,
}

impl NoiseGrid {
    pub fn from_cells(spec: GridSpec, cells: Vec<f64>) -> Self {
        assert_eq!(cells.len(), spec.cells());
        let mut prefix = Vec::with_capacity(spec.ns * (spec.ny + 1));
        for row in cells.chunks(spec.ny) {
            let mut acc = 0.0;
            prefix.push(0.0);
            for v in row {
                acc += v;
                prefix.push(acc);
            }
        }
        Self { spec, cells, prefix }
    }

    pub fn sample(spec: GridSpec, seed: SeedSpec) -> Self {
        let sd = (spec.s_step * spec.y_step).sqrt();
        let mut rng = seed.rng();
        let cells = (0..spec.cells()).map(|_| { let g: f64 = StandardNormal.sample(&mut rng); sd * g }).collect::<Vec<f64>>();
        Self::from_cells(spec, cells)
    }

    /// All-zero noise (test hook).
    pub fn zeros(spec: GridSpec) -> Self {
        Self::from_cells(spec, vec![0.0; spec.cells()])
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.spec.ny + j]
    }

    /// Sum of row `i` over unwrapped column indices `lo..hi`.
    fn segment_sum(&self, i: usize, lo: i64, hi: i64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let ny = self.spec.ny;
        let pre = &self.prefix[i * (ny + 1)..(i + 1) * (ny + 1)];
        let start = self.spec.wrap(lo).expect("coverage was checked");
        let len = (hi - lo) as usize;
        if start + len <= ny {
            pre[start + len] - pre[start]
        } else {
            (pre[ny] - pre[start]) + pre[start + len - ny]
        }
    }
}

#[derive(Debug, Clone)]
struct RowWeights {
    row: usize,
    /// Unwrapped interior column range sharing `interior`.
    inner: (i64, i64),
    interior: f64,
    /// Unwrapped boundary columns and their weights.
    edge: Vec<(i64, f64)>,
}

/// Cell weights of one output point.
#[derive(Debug, Clone)]
pub struct WalshProbe {
    pub point: SpaceTimePoint,
    rows: Vec<RowWeights>,
}

impl WalshProbe {
    pub fn new(point: SpaceTimePoint, spec: &GridSpec, a: f64) -> Result<Self> {
        spec.check_coverage(point)?;
        let (t, x) = (point.t, point.x);
        let (ds, dy) = (spec.s_step, spec.y_step);
        let cone = Band::cone(t, x);
        let area = ds * dy;
        let mut rows = Vec::new();
        for i in 0..spec.ns {
            let s0 = i as f64 * ds;
            if s0 >= t {
                break;
            }
            let s1 = s0 + ds;
            let s_hi = s1.min(t);
            let col = |y: f64| (y - spec.y_min) / dy;
            let j_lo = col(x - (t - s0)).floor() as i64;
            let j_hi = col(x + (t - s0)).ceil() as i64;
            let (inner, interior) = if s1 <= t {
                let a_in = col(x - (t - s1)).ceil() as i64;
                let b_in = col(x + (t - s1)).floor() as i64;
                let w = 0.5 * (-0.5 * a * (t - s0)).exp() * phi1(0.5 * a * ds);
                if b_in > a_in { ((a_in, b_in), w) } else { ((0, 0), 0.0) }
            } else {
                ((0, 0), 0.0)
            };
            let mut edge = Vec::new();
            for j in j_lo..j_hi {
                if j >= inner.0 && j < inner.1 {
                    continue;
                }
                let y0 = spec.y_min + j as f64 * dy;
                let mass = exp_weighted_overlap(&[cone, Band::fixed(y0, y0 + dy)], s0, s_hi, 0.5 * a, -0.5 * a * t);
                if mass > 0.0 {
                    edge.push((j, 0.5 * mass / area));
                }
            }
            rows.push(RowWeights { row: i, inner, interior, edge });
        }
        Ok(Self { point, rows })
    }

    pub fn evaluate(&self, noise: &NoiseGrid) -> f64 {
        self.evaluate_shifted(noise, 0)
    }

    /// Value at `point.x + shift·Δy`, reusing these weights. The caller must
    /// make sure the shifted cone is covered.
    pub fn evaluate_shifted(&self, noise: &NoiseGrid, shift: i64) -> f64 {
        let spec = &noise.spec;
        let mut acc = 0.0;
        for r in &self.rows {
            acc += r.interior * noise.segment_sum(r.row, r.inner.0 + shift, r.inner.1 + shift);
            for &(j, w) in &r.edge {
                acc += w * noise.cell(r.row, spec.wrap(j + shift).expect("coverage was checked"));
            }
        }
        acc
    }

    fn row_weight(r: &RowWeights, j: i64) -> f64 {
        if j >= r.inner.0 && j < r.inner.1 {
            return r.interior;
        }
        r.edge.iter().find(|(k, _)| *k == j).map_or(0.0, |(_, w)| *w)
    }

    fn row_span(r: &RowWeights) -> (i64, i64) {
        let mut lo = if r.inner.1 > r.inner.0 { r.inner.0 } else { i64::MAX };
        let mut hi = if r.inner.1 > r.inner.0 { r.inner.1 } else { i64::MIN };
        for &(j, _) in &r.edge {
            lo = lo.min(j);
            hi = hi.max(j + 1);
        }
        (lo, hi)
    }

    /// Exact covariance of two discretized values: `Σ |cell| w_p w_q`.
    /// Unwrapped column indices are compared directly, which is exact on
    /// non-periodic grids and on periodic grids whose cones do not meet
    /// across the seam.
    pub fn discrete_covariance(&self, other: &WalshProbe, spec: &GridSpec) -> f64 {
        let area = spec.s_step * spec.y_step;
        let mut acc = 0.0;
        for r in &self.rows {
            let Some(o) = other.rows.iter().find(|o| o.row == r.row) else { continue };
            let (a0, a1) = Self::row_span(r);
            let (b0, b1) = Self::row_span(o);
            for j in a0.max(b0)..a1.min(b1) {
                acc += Self::row_weight(r, j) * Self::row_weight(o, j);
            }
        }
        acc * area
    }
}

/// Probes for a point set on one grid, reusable across replicas.
#[derive(Debug, Clone)]
pub struct WalshSampler {
    pub spec: GridSpec,
    pub probes: Vec<WalshProbe>,
}

impl WalshSampler {
    pub fn new(points: &[SpaceTimePoint], spec: GridSpec, a: f64) -> Result<Self> {
        let probes = points.iter().map(|&p| WalshProbe::new(p, &spec, a)).collect::<Result<_>>()?;
        Ok(Self { spec, probes })
    }

    pub fn evaluate(&self, noise: &NoiseGrid) -> Vec<f64> {
        self.probes.iter().map(|p| p.evaluate(noise)).collect()
    }

    pub fn sample(&self, seed: SeedSpec) -> Vec<f64> {
        self.evaluate(&NoiseGrid::sample(self.spec, seed))
    }

    /// Exact covariance matrix of the discretized field at the probes.
    pub fn discrete_covariance(&self) -> Vec<Vec<f64>> {
        let n = self.probes.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.probes[i].discrete_covariance(&self.probes[j], &self.spec);
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }
}

/// One grid-discretized realization of the critically damped field at `points`.
pub fn sample_grid_walsh(points: &[SpaceTimePoint], spec: GridSpec, a: f64, seed: SeedSpec) -> Result<FieldSample> {
    let sampler = WalshSampler::new(points, spec, a)?;
    Ok(FieldSample::new(points.to_vec(), sampler.sample(seed), seed, "walsh"))
}
