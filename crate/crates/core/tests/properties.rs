use kglab::covariance::{cov_critical, cov_spectral, covariance, increment_moment, variance};
use kglab::regularity::{lil_experiment_line, mc_experiment_line, LineModel};
use kglab::sampler::{sample_exact, SeedSpec};
use kglab::{ModelParams, SpaceTimePoint};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = SpaceTimePoint> {
    (0.0..3.0f64, -3.0..3.0f64).prop_map(|(t, x)| SpaceTimePoint::new(t, x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn critical_covariance_is_symmetric_and_bounded(p in point(), q in point(), a in 0.0..3.0f64) {
        let c = cov_critical(p, q, a);
        prop_assert_eq!(c, cov_critical(q, p, a));
        let bound = (cov_critical(p, p, a) * cov_critical(q, q, a)).sqrt();
        prop_assert!(c >= 0.0 && c <= bound * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn increment_moment_is_nonnegative(p in point(), q in point(), a in 0.0..3.0f64) {
        let params = ModelParams::critical(a, 3.0).unwrap();
        prop_assert!(increment_moment(p, q, &params).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Cauchy-Schwarz away from the critical line, in both regimes.
    #[test]
    fn spectral_covariance_obeys_cauchy_schwarz(p in point(), q in point(), m in prop::sample::select(vec![0.5, 1.2])) {
        let params = ModelParams::new(2.0, m, 3.0).unwrap();
        let c = cov_spectral(p, q, &params).unwrap();
        let (vp, vq) = (variance(p, &params).unwrap(), variance(q, &params).unwrap());
        prop_assert!(c.abs() <= (vp * vq).sqrt() * (1.0 + 1e-7) + 1e-12, "{c} vs {vp} {vq}");
    }
}

#[test]
fn spectral_covariance_is_continuous_across_critical_mass() {
    let (p, q) = (SpaceTimePoint::new(1.3, 0.2), SpaceTimePoint::new(0.9, -0.3));
    let crit = cov_critical(p, q, 2.0);
    for m in [1.0 - 1e-4, 1.0 + 1e-4] {
        let c = covariance(p, q, &ModelParams::new(2.0, m, 3.0).unwrap()).unwrap();
        assert!((c / crit - 1.0).abs() < 1e-3, "m = {m}: {c} vs {crit}");
    }
}

#[test]
fn heavier_mass_lowers_variance() {
    let p = SpaceTimePoint::new(2.0, 0.0);
    let v: Vec<f64> = [0.5, 1.0, 1.2, 2.0].iter().map(|&m| variance(p, &ModelParams::new(2.0, m, 3.0).unwrap()).unwrap()).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
}

#[test]
fn replicas_are_reproducible_and_independent() {
    let params = ModelParams::new(2.0, 1.2, 2.0).unwrap();
    let pts = [SpaceTimePoint::new(1.0, 0.0), SpaceTimePoint::new(1.5, 0.5)];
    let a = sample_exact(&pts, &params, SeedSpec::new(3, 4)).unwrap();
    let b = sample_exact(&pts, &params, SeedSpec::new(3, 4)).unwrap();
    let c = sample_exact(&pts, &params, SeedSpec::new(3, 5)).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
}

#[test]
fn brownian_statistics_behave_like_their_limits() {
    // the fixed-point trace stays O(1), the interval statistic sits near 2^{3/4}
    let lil = lil_experiment_line(LineModel::Brownian, 1.0, 4..=16, 200, SeedSpec::new(12, 0)).unwrap();
    let m = lil.median_at(16).unwrap();
    assert!((0.8..2.5).contains(&m), "{m}");
    let mc = mc_experiment_line(LineModel::Brownian, (0.5, 1.0), 10..=10, 8, 100, SeedSpec::new(13, 0)).unwrap();
    let s = mc.median_at(10).unwrap();
    assert!((s / 2f64.powf(0.75) - 1.0).abs() < 0.25, "{s}");
}
