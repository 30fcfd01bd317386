use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::export::FieldSample;
use super::rng::SeedSpec;
use crate::coords::SpaceTimePoint;
use crate::covariance::CovarianceMatrix;
use crate::error::{KgError, Result};
use crate::kernels::ModelParams;

/// Diagonal jitter added per retry, relative to the trace.
pub const JITTER_STEP: f64 = 1e-12;
pub const MAX_JITTER_RETRIES: usize = 3;

/// Lower Cholesky factor of `cov + jitter·I`, trying jitter `0` first and
/// then `k · 1e-12 · trace` for `k = 1..=3`. Returns the factor and the
/// jitter that succeeded.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = cov.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let step = JITTER_STEP * cov.trace().abs();
    for k in 0..=MAX_JITTER_RETRIES {
        let jitter = k as f64 * step;
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch.l(), jitter));
        }
    }
    let min_eigenvalue = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    Err(KgError::Factorization { retries: MAX_JITTER_RETRIES, min_eigenvalue })
}

/// A factorized Gaussian vector, reusable across replicas.
///
/// Exactly repeated rows (duplicate points) share one latent coordinate and
/// zero-variance rows (e.g. points at `t = 0`) are pinned to zero, so only
/// the informative block is factorized.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    /// For each requested row, the latent index or `None` for a constant zero.
    slots: Vec<Option<usize>>,
    factor: DMatrix<f64>,
    pub jitter: f64,
}

impl ExactSampler {
    /// `dedup_keys[i] == dedup_keys[j]` marks rows `i`, `j` as the same variable.
    pub fn from_covariance_keyed<K: PartialEq>(cov: &DMatrix<f64>, dedup_keys: &[K]) -> Result<Self> {
        let n = cov.nrows();
        assert_eq!(dedup_keys.len(), n);
        let mut reps: Vec<usize> = Vec::new();
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            if cov[(i, i)] <= 0.0 {
                slots.push(None);
                continue;
            }
            match reps.iter().position(|&r| dedup_keys[r] == dedup_keys[i]) {
                Some(k) => slots.push(Some(k)),
                None => {
                    reps.push(i);
                    slots.push(Some(reps.len() - 1));
                }
            }
        }
        let sub = DMatrix::from_fn(reps.len(), reps.len(), |i, j| cov[(reps[i], reps[j])]);
        let (factor, jitter) = cholesky_with_jitter(&sub)?;
        Ok(Self { slots, factor, jitter })
    }

    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let keys: Vec<usize> = (0..cov.nrows()).collect();
        Self::from_covariance_keyed(cov, &keys)
    }

    /// Builds the covariance of `u` at `points` and factorizes it.
    pub fn new(points: &[SpaceTimePoint], params: &ModelParams) -> Result<Self> {
        for p in points {
            if !(0.0..=params.horizon).contains(&p.t) {
                return Err(KgError::Precondition(format!("point {p:?} outside [0, T] x R with T = {}", params.horizon)));
            }
        }
        let mut unique: Vec<SpaceTimePoint> = Vec::new();
        let mut index = Vec::with_capacity(points.len());
        for p in points {
            match unique.iter().position(|u| u == p) {
                Some(k) => index.push(k),
                None => {
                    unique.push(*p);
                    index.push(unique.len() - 1);
                }
            }
        }
        let cov = CovarianceMatrix::assemble(&unique, params)?.entries;
        let inner = Self::from_covariance(&cov)?;
        let slots = index.iter().map(|&k| inner.slots[k]).collect();
        Ok(Self { slots, factor: inner.factor, jitter: inner.jitter })
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    /// Number of standard normals consumed per draw.
    pub fn latent_dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample_from_normals(&self, normals: &[f64]) -> Vec<f64> {
        let latent = &self.factor * DVector::from_column_slice(&normals[..self.latent_dim()]);
        self.slots.iter().map(|s| s.map_or(0.0, |k| latent[k])).collect()
    }

    pub fn sample(&self, seed: SeedSpec) -> Vec<f64> {
        self.sample_from_normals(&seed.normals(self.latent_dim()))
    }
}

/// One exact realization of `u` at `points`.
pub fn sample_exact(points: &[SpaceTimePoint], params: &ModelParams, seed: SeedSpec) -> Result<FieldSample> {
    let sampler = ExactSampler::new(points, params)?;
    Ok(FieldSample::new(points.to_vec(), sampler.sample(seed), seed, "exact"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: f64, x: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(t, x)
    }

    #[test]
    fn zero_time_points_sample_to_zero() {
        let params = ModelParams::critical(1.0, 2.0).unwrap();
        let s = sample_exact(&[pt(0.0, 0.0), pt(0.0, 1.0)], &params, SeedSpec::new(1, 0)).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
        let s = sample_exact(&[pt(0.0, 0.0), pt(1.0, 1.0)], &params, SeedSpec::new(1, 0)).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!(s.values[1] != 0.0);
    }

    #[test]
    fn duplicates_are_identical_and_output_is_deterministic() {
        let params = ModelParams::critical(1.0, 2.0).unwrap();
        let pts = [pt(1.0, 0.0), pt(0.5, 0.2), pt(1.0, 0.0)];
        let s = sample_exact(&pts, &params, SeedSpec::new(9, 4)).unwrap();
        assert_eq!(s.values[0].to_bits(), s.values[2].to_bits());
        let again = sample_exact(&pts, &params, SeedSpec::new(9, 4)).unwrap();
        assert_eq!(s.values, again.values);
    }

    #[test]
    fn jitter_rescues_semidefinite_and_reports_failure() {
        // rank one
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let cov = &v * v.transpose();
        let (l, jitter) = cholesky_with_jitter(&cov).unwrap();
        assert!(jitter > 0.0);
        assert!((&l * l.transpose() - &cov).amax() < 1e-10);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_with_jitter(&bad) {
            Err(KgError::Factorization { min_eigenvalue, .. }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wave_variance_by_monte_carlo() {
        let params = ModelParams::new(0.0, 0.0, 2.0).unwrap();
        let sampler = ExactSampler::new(&[pt(1.0, 0.0)], &params).unwrap();
        let n = 100_000;
        let mut sum2 = 0.0;
        let mut sum4 = 0.0;
        for r in 0..n {
            let v = sampler.sample(SeedSpec::new(2024, r))[0];
            sum2 += v * v;
            sum4 += v.powi(4);
        }
        let var = sum2 / n as f64;
        let se = ((sum4 / n as f64 - var * var) / n as f64).sqrt();
        assert!((var - 0.25).abs() < 4.0 * se, "var {var} se {se}");
    }
}
