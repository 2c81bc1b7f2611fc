//! Reproducible truncated Brownian drivers `(B^1, ..., B^J)`.
//!
//! Paths store increments only. A path for a finer time step can be summed
//! down with [`SamplePath::coarsen`], which is how refinement studies keep
//! the same underlying Brownian trajectory at every resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath {
    seed: u64,
    terms: usize,
    dt: f64,
    steps: usize,
    antithetic: bool,
    #[serde(skip)]
    increments: Vec<f64>,
}

/// Draws `steps x terms` i.i.d. `N(0, dt)` increments from a ChaCha8 stream
/// seeded with `seed`.
pub fn sample_path(seed: u64, terms: usize, dt: f64, steps: usize) -> Result<SamplePath> {
    SamplePath::generate(seed, terms, dt, steps)
}

impl SamplePath {
    pub fn generate(seed: u64, terms: usize, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidNoise(format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::InvalidNoise("need at least one step".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = dt.sqrt();
        let increments = (0..steps * terms)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Ok(Self { seed, terms, dt, steps, antithetic: false, increments })
    }

    /// Path with every increment negated; metadata is kept and the
    /// antithetic flag toggled, so applying it twice returns the original.
    pub fn antithetic(&self) -> Self {
        Self {
            increments: self.increments.iter().map(|x| -x).collect(),
            antithetic: !self.antithetic,
            ..self.clone()
        }
    }

    /// Same Brownian path on a time grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::InvalidNoise(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = vec![0.0; steps * self.terms];
        for k in 0..self.steps {
            for j in 0..self.terms {
                increments[(k / factor) * self.terms + j] += self.increment(k, j);
            }
        }
        Ok(Self { dt: self.dt * factor as f64, steps, increments, ..self.clone() })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn increment(&self, step: usize, term: usize) -> f64 {
        self.increments[step * self.terms + term]
    }

    /// Increments of all `J` components over step `k`.
    pub fn row(&self, step: usize) -> &[f64] {
        &self.increments[step * self.terms..(step + 1) * self.terms]
    }

    pub fn column(&self, term: usize) -> Vec<f64> {
        (0..self.steps).map(|k| self.increment(k, term)).collect()
    }

    /// `B^j(t_k)` for `k = 0..=steps`, starting at zero.
    pub fn values(&self, term: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps + 1);
        let mut b = 0.0;
        out.push(b);
        for k in 0..self.steps {
            b += self.increment(k, term);
            out.push(b);
        }
        out
    }

    pub fn quadratic_variation(&self, term: usize) -> f64 {
        (0..self.steps).map(|k| self.increment(k, term).powi(2)).sum()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_regeneration() {
        let a = sample_path(7, 2, 0.01, 100).unwrap();
        let b = sample_path(7, 2, 0.01, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_path(8, 2, 0.01, 100).unwrap());
    }

    #[test]
    fn zero_terms_and_bad_dt() {
        let p = sample_path(1, 0, 0.1, 5).unwrap();
        assert!(p.row(3).is_empty());
        assert!(sample_path(1, 1, 0.0, 5).is_err());
        assert!(sample_path(1, 1, -0.1, 5).is_err());
        assert!(sample_path(1, 1, 0.1, 0).is_err());
    }

    #[test]
    fn moments_of_a_million_increments() {
        let dt = 0.01;
        let m = 1_000_000;
        let p = sample_path(11, 1, dt, m).unwrap();
        let col = p.column(0);
        let mean = col.iter().sum::<f64>() / m as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() <= 4.0 * (dt / m as f64).sqrt(), "mean {mean}");
        assert!((var - dt).abs() <= 0.01 * dt, "variance {var}");
    }

    #[test]
    fn columns_independent_and_quadratic_variation() {
        let steps = 20_000;
        let dt = 1e-4;
        let p = sample_path(3, 3, dt, steps).unwrap();
        let cols: Vec<Vec<f64>> = (0..3).map(|j| p.column(j)).collect();
        let corr = |a: &[f64], b: &[f64]| {
            let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let den = (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
            num / den
        };
        for i in 0..3 {
            for j in 0..i {
                assert!(corr(&cols[i], &cols[j]).abs() <= 4.0 / (steps as f64).sqrt());
            }
        }
        let t = p.horizon();
        assert!((p.quadratic_variation(0) - t).abs() <= 3.0 * (2.0 * dt * t).sqrt());
    }

    #[test]
    fn antithetic_involution_and_metadata() {
        let p = sample_path(5, 2, 0.1, 10).unwrap();
        let q = p.antithetic();
        assert_eq!(q.seed(), 5);
        assert!(q.is_antithetic());
        assert_eq!(q.increment(4, 1), -p.increment(4, 1));
        assert_eq!(q.antithetic(), p);
        // paired estimator of an odd moment vanishes exactly
        let odd = |s: &SamplePath| s.values(0).last().unwrap().powi(3);
        assert_eq!(odd(&p) + odd(&q), 0.0);
    }

    #[test]
    fn coarsening_preserves_path_values() {
        let p = sample_path(9, 2, 0.001, 64).unwrap();
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.steps(), 16);
        assert!((c.dt() - 0.004).abs() < 1e-15);
        let fine = p.values(1);
        let coarse = c.values(1);
        for k in 0..=16 {
            assert!((fine[4 * k] - coarse[k]).abs() < 1e-14);
        }
        assert!(p.coarsen(3).is_err());
    }
}
