//! Quick property suite over every module, printed as a table.

use kglab::covariance::{
    conditional_variance, cov_critical, cov_spectral, cov_x, rect_increment_moment, variance, CovarianceMatrix,
};
use kglab::kernels::{fourier_green, green_hat};
use kglab::reduction::{light_cone_integral, picard_solve, sample_critical_field, GridField};
use kglab::regularity::{lil_norm, mc_norm, median, quantile, scale, var_r, IncrementStatistic};
use kglab::sampler::{ExactSampler, GridSpec, LineSampler, SeedSpec, WalshProbe};
use kglab::{CharCoords, ModelParams, Regime, SpaceTimePoint};

use crate::config::{ExperimentConfig, RawConfig};

#[derive(Debug, Clone)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(suite: &'static str, name: &'static str, pass: bool, detail: String) -> Check {
    Check { suite, name, pass, detail }
}

fn pt(t: f64, x: f64) -> SpaceTimePoint {
    SpaceTimePoint::new(t, x)
}

fn kernels() -> Vec<Check> {
    let crit = ModelParams::critical(2.0, 2.0).unwrap();
    let over = ModelParams::new(2.0, 0.5, 2.0).unwrap();
    let under = ModelParams::new(2.0, 1.5, 2.0).unwrap();
    let regimes = [crit.regime(), over.regime(), under.regime()];
    let (t, xi) = (0.7, 3.0);
    let g = green_hat(t, xi, 2.0, 1.0);
    let near = (fourier_green(t, xi, &ModelParams::new(2.0, 1.0 + 1e-7, 2.0).unwrap()).unwrap() - g).abs();
    vec![
        check(
            "kernels",
            "regime classification",
            regimes == [Regime::Critical, Regime::Mixed, Regime::Oscillatory],
            format!("{regimes:?}"),
        ),
        check("kernels", "transform continuous at critical mass", near < 1e-6, format!("jump {near:.1e}")),
    ]
}

fn covariance() -> Vec<Check> {
    let params = ModelParams::critical(1.0, 3.0).unwrap();
    let (p, q) = (pt(1.2, 0.3), pt(0.8, -0.1));
    let sym = (cov_critical(p, q, 1.0) - cov_critical(q, p, 1.0)).abs();
    let wave = variance(pt(1.0, 0.0), &ModelParams::new(0.0, 0.0, 2.0).unwrap()).unwrap();
    let spectral = cov_spectral(p, q, &ModelParams::new(1.0, 0.5, 3.0).unwrap()).unwrap();
    let cross = (spectral / cov_critical(p, q, 1.0) - 1.0).abs();
    let pts: Vec<SpaceTimePoint> = (0..6).map(|k| pt(0.3 + 0.3 * k as f64, 0.1 * k as f64)).collect();
    let (lo, _) = CovarianceMatrix::assemble(&pts, &params).unwrap().eigenvalue_range();
    let r = rect_increment_moment(1.5, 0.1, 0.0625, 0.0625, &params).unwrap();
    let line = |z: f64| CharCoords::new(0.5, z).to_spacetime();
    let cv = conditional_variance(line(1.2), &[line(0.8), line(1.0)], &params).unwrap();
    vec![
        check("covariance", "symmetry", sym == 0.0, format!("{sym:.1e}")),
        check("covariance", "wave variance 1/4", (wave - 0.25).abs() < 1e-12, format!("{wave}")),
        check("covariance", "spectral matches closed form", cross < 1e-7, format!("relative {cross:.1e}")),
        check("covariance", "positive semidefinite", lo > -1e-12, format!("min eigenvalue {lo:.2e}")),
        check("covariance", "rectangle routes agree", r.relative_gap() < 1e-10, format!("gap {:.1e}", r.relative_gap())),
        check("covariance", "conditional variance positive", cv > 0.0, format!("{cv:.4e}")),
    ]
}

fn sampler() -> Vec<Check> {
    let params = ModelParams::critical(1.0, 2.0).unwrap();
    let pts = [pt(1.0, 0.0), pt(0.5, 0.2), pt(1.0, 0.0)];
    let s = ExactSampler::new(&pts, &params).unwrap();
    let (v1, v2) = (s.sample(SeedSpec::new(3, 1)), s.sample(SeedSpec::new(3, 1)));
    let z: Vec<f64> = (0..8).map(|k| 0.6 + 0.05 * k as f64).collect();
    let w = 0.4;
    let line = LineSampler::new(w, &z, 1.0).unwrap();
    let n = 400_u64;
    let mut m2 = 0.0;
    for r in 0..n {
        let v = line.sample_values(SeedSpec::new(5, r));
        m2 += (v[7] - v[0]).powi(2);
    }
    let emp = m2 / n as f64;
    let exact = {
        let (a, b) = (CharCoords::new(w, z[0]).to_spacetime(), CharCoords::new(w, z[7]).to_spacetime());
        cov_critical(a, a, 1.0) + cov_critical(b, b, 1.0) - 2.0 * cov_critical(a, b, 1.0)
    };
    let probe_pts = [pt(0.75, 0.0), pt(0.5, 0.25)];
    let bias = |step: f64| {
        let spec = GridSpec::covering(&probe_pts, step, step);
        let a = WalshProbe::new(probe_pts[0], &spec, 1.0).unwrap();
        let b = WalshProbe::new(probe_pts[1], &spec, 1.0).unwrap();
        (a.discrete_covariance(&b, &spec) - cov_critical(probe_pts[0], probe_pts[1], 1.0)).abs()
    };
    let ratio = bias(1.0 / 128.0) / bias(1.0 / 64.0);
    vec![
        check("sampler", "seeded draws reproducible", v1 == v2 && v1[0] == v1[2], "duplicate points share a value".into()),
        check(
            "sampler",
            "line increments match covariance",
            (emp / exact - 1.0).abs() < 0.25,
            format!("empirical {emp:.4e} vs {exact:.4e}"),
        ),
        check("sampler", "walsh bias is first order", (ratio - 0.5).abs() < 0.05, format!("ratio {ratio:.3}")),
    ]
}

fn reduction() -> Vec<Check> {
    let step = 1.0 / 16.0;
    let spec = GridSpec::periodic(step, step, 16, 64);
    let (_, u_c) = sample_critical_field(spec, 2.0, SeedSpec::new(7, 0)).unwrap();
    let crit = ModelParams::critical(2.0, 1.0).unwrap();
    let (u, rep) = picard_solve(&u_c, &crit, 1e-8, 50).unwrap();
    let params = ModelParams::new(2.0, 1.2, 1.0).unwrap();
    let (_, rep2) = picard_solve(&u_c, &params, 1e-8, 50).unwrap();
    let worst = rep2.residual_ratios().into_iter().fold(0.0, f64::max);
    let (t, x) = GridField::axes_for(&spec);
    let mut ones = GridField::zeros(t, x, true).unwrap();
    ones.values.fill(1.0);
    let k = light_cone_integral(&ones, 0.0).unwrap();
    let last = k.values[(k.nt() - 1, 0)];
    vec![
        check(
            "reduction",
            "critical Picard is the identity",
            rep.iterations == 1 && u.values == u_c.values,
            format!("{} iteration(s)", rep.iterations),
        ),
        check(
            "reduction",
            "Picard contracts",
            rep2.converged && worst <= rep2.contraction_bound,
            format!("{} iterations, worst ratio {worst:.3} <= {:.3}", rep2.iterations, rep2.contraction_bound),
        ),
        check("reduction", "cone integral of 1 is t^2/2", (last - 0.5).abs() < 1e-12, format!("{last}")),
    ]
}

fn regularity() -> Vec<Check> {
    let h = scale(20);
    let s = IncrementStatistic::new(20, CharCoords::new(0.0, 1.0), -2.0 * lil_norm(h)).unwrap();
    let data = [3.0, 1.0, 2.0, 4.0];
    let (t0, a) = (0.4, 1.0);
    let w = std::f64::consts::SQRT_2 * t0 + 0.3;
    let p = CharCoords::new(w, 0.0);
    let vr = (var_r(w, t0, a) - cov_x(p, p, t0, a)).abs();
    vec![
        check("regularity", "normalizers ordered", lil_norm(h) < mc_norm(h), format!("{:.3e} < {:.3e}", lil_norm(h), mc_norm(h))),
        check("regularity", "ratio uses |increment|", (s.ratio_lil - 2.0).abs() < 1e-12, format!("{}", s.ratio_lil)),
        check(
            "regularity",
            "quantiles interpolate",
            median(&data) == 2.5 && quantile(&data, 1.0) == 4.0,
            "median 2.5, max 4".into(),
        ),
        check("regularity", "R variance matches X at z = 0", vr < 1e-12, format!("{vr:.1e}")),
        check("regularity", "scales below e^-e required", IncrementStatistic::new(3, p, 1.0).is_err(), "n = 3 rejected".into()),
    ]
}

fn cli() -> Vec<Check> {
    let bad = RawConfig::parse("T = -1").and_then(|r| ExperimentConfig::resolve("cov", r));
    let named = bad.as_ref().err().is_some_and(|e| e.to_string().contains("`T`"));
    let ok = RawConfig::parse("a = 0\nm = 0").and_then(|r| ExperimentConfig::resolve("cov", r)).is_ok();
    vec![
        check("cli", "invalid T named in error", named, "negative horizon rejected".into()),
        check("cli", "valid config resolves", ok, "a = 0, m = 0".into()),
    ]
}

pub fn run_suite() -> Vec<Check> {
    [kernels(), covariance(), sampler(), reduction(), regularity(), cli()].concat()
}

pub fn print_table(checks: &[Check]) {
    println!("{:<11} {:<40} {:<6} detail", "suite", "check", "result");
    for c in checks {
        println!("{:<11} {:<40} {:<6} {}", c.suite, c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
}
