//! Reduction of general `(a, m)` to critical damping.
//!
//! The solution solves `u = u_C + b·K[u]` with `b = a²/4 − m²`, where `u_C`
//! is the critically damped stochastic convolution and
//! `K[u](t, x) = ∫₀ᵗ∫ Γ(t − s, x − y) u(s, y) dy ds`. Everything here lives
//! on a periodic space-time grid whose period exceeds every light cone, so
//! the field law on the grid is that of the field on the line.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coords::SpaceTimePoint;
use crate::error::{KgError, Result};
use crate::kernels::ModelParams;
use crate::numerics::special::{phi1, phi_v};
use crate::sampler::{GridSpec, NoiseGrid, SeedSpec, WalshProbe};

/// Magic header of the binary field dump.
pub const FIELD_MAGIC: &[u8; 8] = b"KGFIELD1";
pub const DEFAULT_PICARD_TOL: f64 = 1e-8;
pub const DEFAULT_PICARD_MAX_ITER: usize = 50;

const GRID_RTOL: f64 = 1e-9;

/// Field values on a uniform `t × x` grid; `values[(k, j)] = u(t_k, x_j)`.
/// On a periodic grid `x` is identified modulo `nx·Δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub values: DMatrix<f64>,
    pub periodic: bool,
}

fn uniform_step(grid: &[f64], name: &str) -> Result<f64> {
    if grid.len() < 2 {
        return Err(KgError::GridMismatch(format!("{name}-grid needs at least two points")));
    }
    let h = grid[1] - grid[0];
    if !(h > 0.0) {
        return Err(KgError::GridMismatch(format!("{name}-grid spacing must be positive")));
    }
    for (k, pair) in grid.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - h).abs() > GRID_RTOL * h.max(pair[1].abs()) {
            return Err(KgError::GridMismatch(format!("{name}-grid is not uniform at index {k}")));
        }
    }
    Ok(h)
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= GRID_RTOL * (1.0 + x.abs().max(y.abs()))
}

impl GridField {
    pub fn new(t_grid: Vec<f64>, x_grid: Vec<f64>, values: DMatrix<f64>, periodic: bool) -> Result<Self> {
        uniform_step(&t_grid, "t")?;
        uniform_step(&x_grid, "x")?;
        if values.nrows() != t_grid.len() || values.ncols() != x_grid.len() {
            return Err(KgError::GridMismatch(format!(
                "values are {}×{} but the grid is {}×{}",
                values.nrows(),
                values.ncols(),
                t_grid.len(),
                x_grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KgError::Domain("non-finite field value".into()));
        }
        Ok(Self { t_grid, x_grid, values, periodic })
    }

    pub fn zeros(t_grid: Vec<f64>, x_grid: Vec<f64>, periodic: bool) -> Result<Self> {
        let values = DMatrix::zeros(t_grid.len(), x_grid.len());
        Self::new(t_grid, x_grid, values, periodic)
    }

    /// Axes aligned with a noise grid: `t_k = kΔs` for `k ≤ ns` and `x_j` at
    /// the left cell edges.
    pub fn axes_for(spec: &GridSpec) -> (Vec<f64>, Vec<f64>) {
        let t = (0..=spec.ns).map(|k| k as f64 * spec.s_step).collect();
        let x = (0..spec.ny).map(|j| spec.y_min + j as f64 * spec.y_step).collect();
        (t, x)
    }

    pub fn nt(&self) -> usize {
        self.t_grid.len()
    }

    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }

    pub fn dt(&self) -> f64 {
        self.t_grid[1] - self.t_grid[0]
    }

    pub fn dx(&self) -> f64 {
        self.x_grid[1] - self.x_grid[0]
    }

    pub fn period(&self) -> f64 {
        self.nx() as f64 * self.dx()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    pub fn check_same_grid(&self, other: &GridField) -> Result<()> {
        let same = self.nt() == other.nt()
            && self.nx() == other.nx()
            && self.periodic == other.periodic
            && self.t_grid.iter().zip(&other.t_grid).all(|(a, b)| close(*a, *b))
            && self.x_grid.iter().zip(&other.x_grid).all(|(a, b)| close(*a, *b));
        if same {
            Ok(())
        } else {
            Err(KgError::GridMismatch("fields live on different grids".into()))
        }
    }

    /// Value at `(t_k, x_{j})` with `j` taken modulo `nx` on periodic grids.
    pub fn at_wrapped(&self, k: usize, j: i64) -> Option<f64> {
        let nx = self.nx() as i64;
        let j = if self.periodic {
            j.rem_euclid(nx)
        } else if (0..nx).contains(&j) {
            j
        } else {
            return None;
        };
        Some(self.values[(k, j as usize)])
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,x,value")?;
        for (k, t) in self.t_grid.iter().enumerate() {
            for (j, x) in self.x_grid.iter().enumerate() {
                writeln!(out, "{t},{x},{:e}", self.values[(k, j)])?;
            }
        }
        Ok(())
    }

    /// `KGFIELD1`, `nt` and `nx` as little-endian `u64`, then the values
    /// row by row (time-major) as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(FIELD_MAGIC)?;
        out.write_all(&(self.nt() as u64).to_le_bytes())?;
        out.write_all(&(self.nx() as u64).to_le_bytes())?;
        for k in 0..self.nt() {
            for j in 0..self.nx() {
                out.write_all(&self.values[(k, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a binary dump back as an `nt × nx` matrix.
    pub fn read_binary<R: Read>(input: &mut R) -> Result<DMatrix<f64>> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(KgError::Parse("missing KGFIELD1 header".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let nt = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let nx = u64::from_le_bytes(word) as usize;
        let mut values = DMatrix::zeros(nt, nx);
        for k in 0..nt {
            for j in 0..nx {
                input.read_exact(&mut word)?;
                values[(k, j)] = f64::from_le_bytes(word);
            }
        }
        Ok(values)
    }
}

/// The critically damped field `u_C` on the grid `t_grid × x_grid`, driven
/// by `noise`. Weights are built once per time level and shifted along `x`
/// whenever the output spacing is a multiple of the noise spacing.
pub fn stochastic_convolution(noise: &NoiseGrid, a: f64, t_grid: &[f64], x_grid: &[f64]) -> Result<GridField> {
    let spec = noise.spec;
    uniform_step(t_grid, "t")?;
    uniform_step(x_grid, "x")?;
    let mut values = DMatrix::zeros(t_grid.len(), x_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let template = WalshProbe::new(SpaceTimePoint::new(t, x_grid[0]), &spec, a)?;
        for (j, &x) in x_grid.iter().enumerate() {
            let p = SpaceTimePoint::new(t, x);
            spec.check_coverage(p)?;
            let offset = (x - x_grid[0]) / spec.y_step;
            let shift = offset.round();
            values[(k, j)] = if (offset - shift).abs() < 1e-9 * (1.0 + offset.abs()) {
                template.evaluate_shifted(noise, shift as i64)
            } else {
                WalshProbe::new(p, &spec, a)?.evaluate(noise)
            };
        }
    }
    GridField::new(t_grid.to_vec(), x_grid.to_vec(), values, spec.periodic)
}

/// Samples noise on `spec` and returns `u_C` on the aligned axes.
pub fn sample_critical_field(spec: GridSpec, a: f64, seed: SeedSpec) -> Result<(NoiseGrid, GridField)> {
    let noise = NoiseGrid::sample(spec, seed);
    let (t, x) = GridField::axes_for(&spec);
    let field = stochastic_convolution(&noise, a, &t, &x)?;
    Ok((noise, field))
}

/// Convergence record of [`picard_solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// `sup |u^{k+1} − u^k|` per iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// `|a²/4 − m²| T²/2`, the a-priori contraction factor.
    pub contraction_bound: f64,
}

impl PicardReport {
    /// Ratios of consecutive residuals.
    pub fn residual_ratios(&self) -> Vec<f64> {
        self.residual_history.windows(2).filter(|p| p[0] > 0.0).map(|p| p[1] / p[0]).collect()
    }
}

fn check_picard_grid(u: &GridField) -> Result<()> {
    if !u.periodic {
        return Err(KgError::Precondition("the Picard solver needs a periodic grid".into()));
    }
    if u.t_grid[0].abs() > 1e-12 {
        return Err(KgError::Precondition("the time grid must start at t = 0".into()));
    }
    if !close(u.dt(), u.dx()) {
        return Err(KgError::GridMismatch(format!("Picard needs Δt = Δx, got {} and {}", u.dt(), u.dx())));
    }
    if 2 * (u.nt() - 1) >= u.nx() {
        return Err(KgError::Coverage(format!(
            "light cones up to t = {} wrap around the period {}",
            u.t_grid[u.nt() - 1],
            u.period()
        )));
    }
    Ok(())
}

/// Discrete light-cone integral `K[u]` on a periodic grid with `Δt = Δx`.
///
/// The trapezoid rule is used in `s` over the time levels and in `y` over
/// the nodes; with equal steps the cone edges `x ± (t − s)` fall on nodes.
pub fn light_cone_integral(u: &GridField, a: f64) -> Result<GridField> {
    check_picard_grid(u)?;
    let (nt, nx) = (u.nt(), u.nx());
    let h = u.dt();
    let pad = nt;
    let decay: Vec<f64> = (0..nt).map(|m| 0.5 * (-0.5 * a * m as f64 * h).exp()).collect();
    // prefix[l][i] = Σ_{i' < i} u_l[(i' − pad) mod nx]
    let prefix: Vec<Vec<f64>> = (0..nt)
        .map(|l| {
            let mut p = Vec::with_capacity(nx + 2 * pad + 1);
            let mut acc = 0.0;
            p.push(0.0);
            for i in 0..nx + 2 * pad {
                acc += u.values[(l, (i + nx * pad - pad) % nx)];
                p.push(acc);
            }
            p
        })
        .collect();
    let mut out = DMatrix::zeros(nt, nx);
    for k in 1..nt {
        for j in 0..nx {
            let mut acc = 0.0;
            for l in 0..k {
                let m = k - l;
                let (lo, hi) = (j + pad - m, j + pad + m);
                let inner = prefix[l][hi + 1] - prefix[l][lo]
                    - 0.5 * (u.values[(l, (lo + nx * pad - pad) % nx)] + u.values[(l, (hi + nx * pad - pad) % nx)]);
                let w = if l == 0 { 0.5 } else { 1.0 };
                acc += w * decay[m] * inner;
            }
            out[(k, j)] = acc * h * h;
        }
    }
    GridField::new(u.t_grid.clone(), u.x_grid.clone(), out, u.periodic)
}

/// Solves `u = u_C + (a²/4 − m²) K[u]` by Picard iteration from `u⁰ = u_C`.
///
/// Stops once `sup |u^{k+1} − u^k| < tol` and returns `u^{k+1}`; after
/// `max_iter` iterations without convergence the last iterate is returned
/// with `converged = false`.
pub fn picard_solve(u_c: &GridField, params: &ModelParams, tol: f64, max_iter: usize) -> Result<(GridField, PicardReport)> {
    if !(tol > 0.0) {
        return Err(KgError::invalid("tol", format!("must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(KgError::invalid("max_iter", "must be at least 1"));
    }
    check_picard_grid(u_c)?;
    let b = if params.is_critical() { 0.0 } else { params.discriminant() };
    let t_max = u_c.t_grid[u_c.nt() - 1];
    let mut report = PicardReport {
        iterations: 0,
        residual_history: Vec::new(),
        converged: false,
        contraction_bound: b.abs() * t_max * t_max / 2.0,
    };
    let mut current = u_c.clone();
    while report.iterations < max_iter {
        let next_values = if b == 0.0 {
            u_c.values.clone()
        } else {
            &u_c.values + light_cone_integral(&current, params.a)?.values * b
        };
        let residual = (&next_values - &current.values).amax();
        current.values = next_values;
        report.iterations += 1;
        report.residual_history.push(residual);
        if residual < tol {
            report.converged = true;
            break;
        }
    }
    Ok((current, report))
}

/// `sup |u − u_C − b K[u]|` on the grid.
pub fn fixed_point_residual(u: &GridField, u_c: &GridField, params: &ModelParams) -> Result<f64> {
    u.check_same_grid(u_c)?;
    let b = if params.is_critical() { 0.0 } else { params.discriminant() };
    let k = light_cone_integral(u, params.a)?;
    Ok((&u.values - &u_c.values - k.values * b).amax())
}

/// `u_L = u − u_C` with its characteristic-direction Lipschitz statistic.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub u_l: GridField,
    /// `max |u_L(t + h, x + h) − u_L(t, x)| / h` over grid pairs with `h ≤ 1`.
    pub statistic: f64,
    /// `sup |u|` over the grid, which contains the relevant backward cones.
    pub sup_u: f64,
}

impl Decomposition {
    /// Right-hand side `C sup |u|` of the Lipschitz bound.
    pub fn bound(&self, params: &ModelParams) -> f64 {
        lipschitz_constant(params) * self.sup_u
    }
}

pub fn decompose(u: &GridField, u_c: &GridField) -> Result<Decomposition> {
    u.check_same_grid(u_c)?;
    let ratio = u.dt() / u.dx();
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
        return Err(KgError::GridMismatch(format!("Δt/Δx = {ratio} is not a positive integer")));
    }
    let r = r as i64;
    let u_l = GridField::new(u.t_grid.clone(), u.x_grid.clone(), &u.values - &u_c.values, u.periodic)?;
    let h0 = u.dt();
    let max_m = ((1.0 + 1e-12) / h0).floor() as usize;
    let mut statistic: f64 = 0.0;
    for k in 0..u.nt() {
        for m in 1..=max_m.min(u.nt() - 1 - k) {
            let h = m as f64 * h0;
            for j in 0..u.nx() {
                if let Some(v) = u_l.at_wrapped(k + m, j as i64 + m as i64 * r) {
                    statistic = statistic.max((v - u_l.values[(k, j)]).abs() / h);
                }
            }
        }
    }
    Ok(Decomposition { u_l, statistic, sup_u: u.sup_norm() })
}

/// Frozen constant `C` of the bound
/// `sup_{h≤1} |u_L(t+h, x+h) − u_L(t, x)|/h ≤ C sup |u|` for `t + h ≤ T`:
/// `|b| (a/2 · ∫₀ᵀ r e^{−ar/2} dr + ∫₀ᵀ e^{−ar/2} dr + 1/2)`, from the three
/// pieces (old cone with changed weight, new strip, new top).
pub fn lipschitz_constant(params: &ModelParams) -> f64 {
    let (a, t) = (params.a, params.horizon);
    let b = if params.is_critical() { 0.0 } else { params.discriminant() };
    b.abs() * (0.5 * a * t * t * phi_v(-0.5 * a * t) + t * phi1(-0.5 * a * t) + 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::variance_critical;

    fn spec(step: f64, t: f64, period: f64) -> GridSpec {
        GridSpec::periodic(step, step, (t / step).round() as usize, (period / step).round() as usize)
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let s = spec(1.0 / 16.0, 1.0, 3.0);
        let (t, x) = GridField::axes_for(&s);
        let u = stochastic_convolution(&NoiseGrid::zeros(s), 1.0, &t, &x).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
        let (sol, report) = picard_solve(&u, &ModelParams::new(2.0, 0.3, 1.0).unwrap(), 1e-8, 50).unwrap();
        assert_eq!(sol.sup_norm(), 0.0);
        assert!(report.converged);
    }

    #[test]
    fn shifted_template_matches_direct_probe() {
        let s = spec(1.0 / 16.0, 1.0, 3.0);
        let (noise, u) = sample_critical_field(s, 1.5, SeedSpec::new(3, 1)).unwrap();
        for &(k, j) in &[(16usize, 0usize), (9, 40), (16, 47), (3, 5)] {
            let p = SpaceTimePoint::new(u.t_grid[k], u.x_grid[j]);
            let direct = WalshProbe::new(p, &s, 1.5).unwrap().evaluate(&noise);
            assert!((direct - u.values[(k, j)]).abs() < 1e-12, "{k} {j}");
        }
    }

    #[test]
    fn critical_damping_returns_input_after_one_iteration() {
        let s = spec(1.0 / 16.0, 1.0, 3.0);
        let (_, u_c) = sample_critical_field(s, 2.0, SeedSpec::new(1, 0)).unwrap();
        let (u, report) = picard_solve(&u_c, &ModelParams::critical(2.0, 1.0).unwrap(), 1e-8, 50).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(u, u_c);
        let d = decompose(&u, &u_c).unwrap();
        assert_eq!(d.u_l.sup_norm(), 0.0);
        assert_eq!(lipschitz_constant(&ModelParams::critical(2.0, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn cone_integral_of_constant_is_exact() {
        // K[1](t) = ∫₀ᵗ r e^{−ar/2} dr; the trapezoid error is O(h²)
        let s = spec(1.0 / 64.0, 1.0, 3.0);
        let (t, x) = GridField::axes_for(&s);
        let ones = GridField::new(t.clone(), x, DMatrix::from_element(t.len(), s.ny, 1.0), true).unwrap();
        let a = 1.2;
        let k = light_cone_integral(&ones, a).unwrap();
        for (i, &tk) in t.iter().enumerate() {
            let exact = tk * tk * phi_v(-0.5 * a * tk);
            assert!((k.values[(i, 7)] - exact).abs() < 1e-4, "{tk}: {} {exact}", k.values[(i, 7)]);
        }
    }

    #[test]
    fn residual_contracts_and_fixed_point_holds() {
        let s = spec(1.0 / 32.0, 1.5, 4.0);
        let (_, u_c) = sample_critical_field(s, 2.0, SeedSpec::new(11, 0)).unwrap();
        for &m in &[1.2, 0.5, 0.0, 1.6] {
            let params = ModelParams::new(2.0, m, 1.5).unwrap();
            let (u, report) = picard_solve(&u_c, &params, 1e-10, 60).unwrap();
            assert!(report.converged, "m = {m}: {report:?}");
            for r in report.residual_ratios() {
                assert!(r <= report.contraction_bound * 1.01, "m = {m}: ratio {r} bound {}", report.contraction_bound);
            }
            assert!(fixed_point_residual(&u, &u_c, &params).unwrap() < 1e-10);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = spec(1.0 / 16.0, 1.0, 3.0);
        let (_, u_c) = sample_critical_field(s, 2.0, SeedSpec::new(2, 0)).unwrap();
        let (_, report) = picard_solve(&u_c, &ModelParams::new(2.0, 0.0, 1.0).unwrap(), 1e-14, 2).unwrap();
        assert_eq!(report.iterations, 2);
        assert!(!report.converged);
        assert!(picard_solve(&u_c, &ModelParams::new(2.0, 0.0, 1.0).unwrap(), 0.0, 2).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let s = spec(0.25, 1.0, 3.0);
        let (_, u) = sample_critical_field(s, 1.0, SeedSpec::new(5, 5)).unwrap();
        let mut buf = Vec::new();
        u.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"KGFIELD1");
        assert_eq!(buf.len(), 24 + 8 * u.nt() * u.nx());
        let back = GridField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, u.values);
    }

    #[test]
    fn grid_mismatch_is_detected() {
        let a = GridField::zeros(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0, 1.5], true).unwrap();
        let b = GridField::zeros(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0], true).unwrap();
        assert!(matches!(decompose(&a, &b), Err(KgError::GridMismatch(_))));
        assert!(GridField::zeros(vec![0.0, 0.5, 1.2], vec![0.0, 1.0], true).is_err());
    }

    #[test]
    fn variance_matches_discrete_and_continuum() {
        let s = spec(1.0 / 32.0, 1.0, 3.0);
        let a = 1.0;
        let (k, j) = (32, 10);
        let n = 3000;
        let vals: Vec<f64> = (0..n)
            .map(|r| sample_critical_field(s, a, SeedSpec::new(77, r)).unwrap().1.values[(k, j)])
            .collect();
        let var = vals.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let m4 = vals.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - var * var) / n as f64).sqrt();
        let p = SpaceTimePoint::new(1.0, s.y_min + j as f64 * s.y_step);
        let probe = WalshProbe::new(p, &s, a).unwrap();
        let discrete = probe.discrete_covariance(&probe, &s);
        let exact = variance_critical(1.0, a);
        assert!((var - discrete).abs() < 4.0 * se, "{var} {discrete} {se}");
        assert!((discrete - exact).abs() < 0.05 * exact, "{discrete} {exact}");
    }

    #[test]
    fn stronger_damping_shrinks_the_field() {
        let s = spec(1.0 / 16.0, 1.0, 3.0);
        let median = |a: f64| {
            let mut v: Vec<f64> = (0..201)
                .map(|r| sample_critical_field(s, a, SeedSpec::new(8, r)).unwrap().1.values[(16, 20)].abs())
                .collect();
            v.sort_by(f64::total_cmp);
            v[100]
        };
        assert!(median(8.0) < median(1.0));
    }
}
