//! Random ground-truth Gaussian mixtures: Dirichlet weights projected above
//! a floor, means uniform in a box, covariances with a random orthogonal
//! eigenbasis and log-uniform eigenvalues. Each generated mixture carries a
//! Monte-Carlo estimate of its maximum pairwise overlap.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::metrics::{max_omega, MaxOmegaEstimate};
use crate::mixture::{Component, GaussianComponent, MixingDistribution};
use crate::seed;

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub k: usize,
    pub d: usize,
    /// Weights are clamped up to this floor and renormalized.
    pub weight_floor: f64,
    /// Means drawn uniformly from `[-mean_box, mean_box]^d`.
    pub mean_box: f64,
    /// Covariance eigenvalues drawn log-uniformly from this range.
    pub eigenvalue_range: (f64, f64),
    pub seed: u64,
    /// Monte-Carlo draws for the attached overlap estimate.
    pub overlap_draws: usize,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "mixture order must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::config("d", "dimension must be at least 1"));
        }
        if !(self.weight_floor >= 0.0) || self.weight_floor * self.k as f64 > 1.0 {
            return Err(Error::config(
                "weight_floor",
                format!(
                    "floor {} is infeasible for {} components",
                    self.weight_floor, self.k
                ),
            ));
        }
        if !(self.mean_box > 0.0) {
            return Err(Error::config("mean_box", "must be positive"));
        }
        let (lo, hi) = self.eigenvalue_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config(
                "cov_eigenvalues",
                "expected 0 < low <= high",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTruth {
    pub mixture: MixingDistribution,
    /// Attached overlap estimate; absent for single-component mixtures.
    pub max_omega: Option<MaxOmegaEstimate>,
}

pub fn generate_mixture(spec: &GeneratorSpec) -> Result<GeneratedTruth> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, &[seed::stream::TRUTH]);
    let k = spec.k;
    let d = spec.d;

    // Dirichlet(1,..,1) via normalized unit exponentials, then floor and
    // renormalize.
    let mut weights: Vec<f64> = if k == 1 {
        vec![1.0]
    } else {
        let draws: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = draws.iter().sum();
        draws.iter().map(|v| v / total).collect()
    };
    for w in &mut weights {
        *w = w.max(spec.weight_floor);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }

    let (lo, hi) = spec.eigenvalue_range;
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let mean = DVector::from_fn(d, |_, _| (2.0 * rng.random::<f64>() - 1.0) * spec.mean_box);
        let gaussian = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = gaussian.qr().q();
        let eigenvalues = DVector::from_fn(d, |_, _| {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
        });
        let mut cov = &q * DMatrix::from_diagonal(&eigenvalues) * q.transpose();
        // Symmetrize against rounding before validation.
        cov = (&cov + cov.transpose()) * 0.5;
        components.push(Component::Gaussian(GaussianComponent::new(mean, cov)?));
    }
    let mixture = MixingDistribution::new(weights, components)?;
    let overlap = if k >= 2 {
        let mut omega_rng = seed::rng(spec.seed, &[seed::stream::TRUTH, 1]);
        Some(max_omega(&mixture, spec.overlap_draws, &mut omega_rng)?)
    } else {
        None
    };
    Ok(GeneratedTruth {
        mixture,
        max_omega: overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, d: usize) -> GeneratorSpec {
        GeneratorSpec {
            k,
            d,
            weight_floor: 0.1,
            mean_box: 5.0,
            eigenvalue_range: (0.5, 2.0),
            seed: 11,
            overlap_draws: 2_000,
        }
    }

    #[test]
    fn single_component_degenerate_weights() {
        let t = generate_mixture(&spec(1, 3)).unwrap();
        assert_eq!(t.mixture.weights(), &[1.0]);
        assert!(t.max_omega.is_none());
    }

    #[test]
    fn unit_eigenvalue_range_gives_identity_covariances() {
        let mut s = spec(2, 4);
        s.eigenvalue_range = (1.0, 1.0);
        let t = generate_mixture(&s).unwrap();
        for c in t.mixture.components() {
            match c {
                Component::Gaussian(g) => {
                    let gap = g.covariance() - DMatrix::<f64>::identity(4, 4);
                    assert!(gap.norm() < 1e-12, "gap {}", gap.norm());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn weights_respect_floor() {
        let t = generate_mixture(&spec(5, 2)).unwrap();
        for &w in t.mixture.weights() {
            assert!(w >= 0.1 / (1.0 + 0.5), "weight {w}"); // floor / max renorm
        }
        let sum: f64 = t.mixture.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_mixture(&spec(3, 3)).unwrap();
        let b = generate_mixture(&spec(3, 3)).unwrap();
        assert_eq!(a.mixture, b.mixture);
    }

    #[test]
    fn infeasible_floor_rejected() {
        let mut s = spec(5, 2);
        s.weight_floor = 0.3;
        assert!(generate_mixture(&s).is_err());
    }
}
