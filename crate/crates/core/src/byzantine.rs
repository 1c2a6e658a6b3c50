//! Failure-set selection and the attack transformations applied to
//! transmitted estimates.
//!
//! Every injection draws exclusively from the failure RNG stream, so the
//! corrupted values are independent of the authentic estimates they replace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Component, Family, GammaComponent, GaussianComponent, MixingDistribution};

/// Standard deviation of the replacement mean entries under mean failure.
const MEAN_FAILURE_SD: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Replace every component mean with iid N(0, 100^2) entries.
    Mean,
    /// Add an independent random PSD perturbation to every covariance.
    Covariance,
    /// Replace the mixing weights with a Dirichlet draw.
    Weight,
    /// Replace every Gamma shape with a U(1, 10) draw.
    Shape,
    /// Add U(0, 10) noise to every Gamma scale.
    Scale,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Mean => "mean",
            FailureKind::Covariance => "covariance",
            FailureKind::Weight => "weight",
            FailureKind::Shape => "shape",
            FailureKind::Scale => "scale",
        }
    }

    pub fn applies_to(self, family: Family) -> bool {
        match self {
            FailureKind::Mean | FailureKind::Covariance => family == Family::Gaussian,
            FailureKind::Weight => true,
            FailureKind::Shape | FailureKind::Scale => family == Family::Gamma,
        }
    }
}

/// Which machines fail and how.
#[derive(Debug, Clone)]
pub struct FailureSpec {
    pub alpha: f64,
    pub kind: FailureKind,
    pub seed: u64,
}

impl FailureSpec {
    pub fn new(alpha: f64, kind: FailureKind, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&alpha) {
            return Err(Error::Injection(format!(
                "failure fraction must lie in [0, 0.5), got {alpha}"
            )));
        }
        Ok(FailureSpec { alpha, kind, seed })
    }
}

/// Uniformly random failure set of size `floor(alpha * m)`; the failed
/// minority must stay below half of the machines.
pub fn select_failure_set<R: Rng>(m: usize, alpha: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::Injection(format!(
            "failure fraction must lie in [0, 0.5), got {alpha}"
        )));
    }
    let count = (alpha * m as f64).floor() as usize;
    if 2 * count >= m {
        return Err(Error::Injection(format!(
            "{count} failed machines out of {m} is not a minority"
        )));
    }
    let mut picked = rand::seq::index::sample(rng, m, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Replace every component mean with a fresh iid N(0, 100^2) vector; weights
/// and covariances are untouched.
pub fn inject_mean_failure<R: Rng>(g: &MixingDistribution, rng: &mut R) -> Result<MixingDistribution> {
    if g.family() != Family::Gaussian {
        return Err(Error::Injection("mean failure applies to Gaussian mixtures".into()));
    }
    let d = g.dim();
    let components = g
        .components()
        .iter()
        .map(|c| match c {
            Component::Gaussian(gc) => {
                let mean = DVector::from_fn(d, |_, _| {
                    MEAN_FAILURE_SD * rng.sample::<f64, _>(StandardNormal)
                });
                Ok(Component::Gaussian(GaussianComponent::new(
                    mean,
                    gc.covariance().clone(),
                )?))
            }
            Component::Gamma(_) => unreachable!("family checked"),
        })
        .collect::<Result<_>>()?;
    MixingDistribution::new(g.weights().to_vec(), components)
}

/// Add `d^{-2} sum_i xi_i xi_i^T` (xi iid standard Gaussian vectors) to every
/// covariance, drawn independently per component. The noise is PSD, so the
/// result stays positive definite.
pub fn inject_cov_failure<R: Rng>(g: &MixingDistribution, rng: &mut R) -> Result<MixingDistribution> {
    if g.family() != Family::Gaussian {
        return Err(Error::Injection("covariance failure applies to Gaussian mixtures".into()));
    }
    let d = g.dim();
    let components = g
        .components()
        .iter()
        .map(|c| match c {
            Component::Gaussian(gc) => {
                let mut noise = DMatrix::zeros(d, d);
                for _ in 0..d {
                    let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    noise += &xi * xi.transpose();
                }
                noise /= (d * d) as f64;
                Ok(Component::Gaussian(GaussianComponent::new(
                    gc.mean().clone(),
                    gc.covariance() + noise,
                )?))
            }
            Component::Gamma(_) => unreachable!("family checked"),
        })
        .collect::<Result<_>>()?;
    MixingDistribution::new(g.weights().to_vec(), components)
}

/// Replace the mixing weights with one Dirichlet(a_1..a_K) draw, each a_k an
/// independent uniform integer in [10, 20] (fresh per call); components are
/// untouched.
pub fn inject_weight_failure<R: Rng>(
    g: &MixingDistribution,
    rng: &mut R,
) -> Result<MixingDistribution> {
    let k = g.order();
    let alphas: Vec<f64> = (0..k).map(|_| rng.random_range(10..=20) as f64).collect();
    // Dirichlet via normalized Gamma draws.
    let mut draws = Vec::with_capacity(k);
    for &a in &alphas {
        let gamma = rand_distr::Gamma::new(a, 1.0).expect("valid dirichlet parameters");
        draws.push(gamma.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    let weights: Vec<f64> = draws.iter().map(|v| v / total).collect();
    MixingDistribution::new(weights, g.components().to_vec())
}

/// Gamma-family attacks: shapes replaced by U(1, 10) draws, or scales
/// incremented by U(0, 10) draws.
pub fn inject_gamma_failure<R: Rng>(
    g: &MixingDistribution,
    kind: FailureKind,
    rng: &mut R,
) -> Result<MixingDistribution> {
    if g.family() != Family::Gamma {
        return Err(Error::Injection("gamma failure applies to Gamma mixtures".into()));
    }
    let components = g
        .components()
        .iter()
        .map(|c| match c {
            Component::Gamma(gc) => {
                let comp = match kind {
                    FailureKind::Shape => {
                        GammaComponent::new(1.0 + 9.0 * rng.random::<f64>(), gc.scale())?
                    }
                    FailureKind::Scale => {
                        GammaComponent::new(gc.shape(), gc.scale() + 10.0 * rng.random::<f64>())?
                    }
                    _ => {
                        return Err(Error::Injection(
                            "expected a shape or scale failure kind".into(),
                        ))
                    }
                };
                Ok(Component::Gamma(comp))
            }
            Component::Gaussian(_) => unreachable!("family checked"),
        })
        .collect::<Result<_>>()?;
    MixingDistribution::new(g.weights().to_vec(), components)
}

/// Dispatch on the failure kind.
pub fn inject<R: Rng>(
    kind: FailureKind,
    g: &MixingDistribution,
    rng: &mut R,
) -> Result<MixingDistribution> {
    match kind {
        FailureKind::Mean => inject_mean_failure(g, rng),
        FailureKind::Covariance => inject_cov_failure(g, rng),
        FailureKind::Weight => inject_weight_failure(g, rng),
        FailureKind::Shape | FailureKind::Scale => inject_gamma_failure(g, kind, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use nalgebra::{DMatrix, DVector};

    fn gaussian_mixture(d: usize, k: usize) -> MixingDistribution {
        let comps = (0..k)
            .map(|i| {
                Component::Gaussian(
                    GaussianComponent::new(
                        DVector::from_element(d, i as f64),
                        DMatrix::identity(d, d) * (1.0 + 0.1 * i as f64),
                    )
                    .unwrap(),
                )
            })
            .collect();
        MixingDistribution::new(vec![1.0 / k as f64; k], comps).unwrap()
    }

    fn gamma_mixture() -> MixingDistribution {
        MixingDistribution::new(
            vec![0.32, 0.35, 0.33],
            vec![
                Component::Gamma(GammaComponent::new(1.0, 1.0).unwrap()),
                Component::Gamma(GammaComponent::new(8.0, 6.0).unwrap()),
                Component::Gamma(GammaComponent::new(30.0, 10.0).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn failure_set_size_and_determinism() {
        let mut rng = seed::rng(3, &[seed::stream::FAILURE_SELECT]);
        let set = select_failure_set(100, 0.3, &mut rng).unwrap();
        assert_eq!(set.len(), 30);
        let mut dedup = set.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 30);
        let mut rng2 = seed::rng(3, &[seed::stream::FAILURE_SELECT]);
        assert_eq!(set, select_failure_set(100, 0.3, &mut rng2).unwrap());
    }

    #[test]
    fn failure_set_empty_at_alpha_zero() {
        let mut rng = seed::rng(1, &[]);
        assert!(select_failure_set(10, 0.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn failure_set_rejects_majority() {
        let mut rng = seed::rng(1, &[]);
        assert!(select_failure_set(10, 0.5, &mut rng).is_err());
        // floor(0.45 * 2) = 0 is fine; floor(0.49 * 100) = 49 is fine;
        // 2 * 49 >= 100 is false, so this passes:
        assert!(select_failure_set(100, 0.49, &mut rng).is_ok());
        // but 1 failure out of 2 machines is not a minority:
        assert!(select_failure_set(2, 0.5, &mut rng).is_err());
    }

    #[test]
    fn mean_failure_touches_only_means() {
        let g = gaussian_mixture(10, 3);
        let mut rng = seed::rng(5, &[seed::stream::FAILURE_NOISE]);
        let bad = inject_mean_failure(&g, &mut rng).unwrap();
        assert_eq!(bad.weights(), g.weights());
        for (b, o) in bad.components().iter().zip(g.components()) {
            match (b, o) {
                (Component::Gaussian(b), Component::Gaussian(o)) => {
                    assert_eq!(b.covariance(), o.covariance());
                    // d = 10 replacement means have norm > 50 with
                    // overwhelming probability.
                    assert!(b.mean().norm() > 50.0, "norm {}", b.mean().norm());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn cov_failure_touches_only_covariances() {
        let g = gaussian_mixture(4, 2);
        let mut rng = seed::rng(6, &[seed::stream::FAILURE_NOISE]);
        let bad = inject_cov_failure(&g, &mut rng).unwrap();
        assert_eq!(bad.weights(), g.weights());
        for (b, o) in bad.components().iter().zip(g.components()) {
            match (b, o) {
                (Component::Gaussian(b), Component::Gaussian(o)) => {
                    assert_eq!(b.mean(), o.mean());
                    // Positive definiteness is revalidated at construction;
                    // the added trace is positive.
                    assert!(b.covariance().trace() > o.covariance().trace());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn cov_failure_added_trace_near_one() {
        // E[tr(d^{-2} sum xi xi^T)] = 1 for any d; average over many draws.
        let g = gaussian_mixture(4, 1);
        let mut rng = seed::rng(7, &[seed::stream::FAILURE_NOISE]);
        let trials = 10_000;
        let mut total = 0.0;
        let base = match &g.components()[0] {
            Component::Gaussian(c) => c.covariance().trace(),
            _ => unreachable!(),
        };
        for _ in 0..trials {
            let bad = inject_cov_failure(&g, &mut rng).unwrap();
            match &bad.components()[0] {
                Component::Gaussian(c) => total += c.covariance().trace() - base,
                _ => unreachable!(),
            }
        }
        let mean_added = total / trials as f64;
        assert!((mean_added - 1.0).abs() < 0.05, "mean added trace {mean_added}");
    }

    #[test]
    fn weight_failure_touches_only_weights() {
        let g = gaussian_mixture(3, 5);
        let mut rng = seed::rng(8, &[seed::stream::FAILURE_NOISE]);
        let bad = inject_weight_failure(&g, &mut rng).unwrap();
        assert_eq!(bad.components(), g.components());
        let sum: f64 = bad.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_failure_marginal_mean_near_uniform() {
        // With concentration parameters in [10, 20], each weight has
        // marginal mean 1/K; check the empirical mean over many draws.
        let g = gaussian_mixture(2, 5);
        let mut rng = seed::rng(9, &[seed::stream::FAILURE_NOISE]);
        let trials = 10_000;
        let mut mean_w0 = 0.0;
        for _ in 0..trials {
            let bad = inject_weight_failure(&g, &mut rng).unwrap();
            mean_w0 += bad.weights()[0];
        }
        mean_w0 /= trials as f64;
        assert!((mean_w0 - 0.2).abs() < 0.01, "mean weight {mean_w0}");
    }

    #[test]
    fn shape_failure_support_and_untouched_fields() {
        let g = gamma_mixture();
        let mut rng = seed::rng(10, &[seed::stream::FAILURE_NOISE]);
        let bad = inject_gamma_failure(&g, FailureKind::Shape, &mut rng).unwrap();
        assert_eq!(bad.weights(), g.weights());
        for (b, o) in bad.components().iter().zip(g.components()) {
            match (b, o) {
                (Component::Gamma(b), Component::Gamma(o)) => {
                    assert!(b.shape() >= 1.0 && b.shape() <= 10.0);
                    assert_eq!(b.scale(), o.scale());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn scale_failure_strictly_increases_scales() {
        let g = gamma_mixture();
        let mut rng = seed::rng(11, &[seed::stream::FAILURE_NOISE]);
        let bad = inject_gamma_failure(&g, FailureKind::Scale, &mut rng).unwrap();
        assert_eq!(bad.weights(), g.weights());
        for (b, o) in bad.components().iter().zip(g.components()) {
            match (b, o) {
                (Component::Gamma(b), Component::Gamma(o)) => {
                    assert!(b.scale() >= o.scale());
                    assert_eq!(b.shape(), o.shape());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn family_mismatch_rejected() {
        let mut rng = seed::rng(12, &[]);
        assert!(inject_mean_failure(&gamma_mixture(), &mut rng).is_err());
        assert!(inject_cov_failure(&gamma_mixture(), &mut rng).is_err());
        assert!(inject_gamma_failure(&gaussian_mixture(2, 2), FailureKind::Shape, &mut rng).is_err());
    }

    #[test]
    fn injection_independent_of_input_values() {
        // The same RNG stream produces the same replacement means whatever
        // the authentic estimate holds.
        let a = gaussian_mixture(3, 2);
        let mut shifted_comps: Vec<Component> = Vec::new();
        for c in a.components() {
            match c {
                Component::Gaussian(g) => shifted_comps.push(Component::Gaussian(
                    GaussianComponent::new(g.mean() * 42.0, g.covariance() * 2.0).unwrap(),
                )),
                _ => unreachable!(),
            }
        }
        let b = MixingDistribution::new(a.weights().to_vec(), shifted_comps).unwrap();
        let bad_a = inject_mean_failure(&a, &mut seed::rng(13, &[0])).unwrap();
        let bad_b = inject_mean_failure(&b, &mut seed::rng(13, &[0])).unwrap();
        for (x, y) in bad_a.components().iter().zip(bad_b.components()) {
            match (x, y) {
                (Component::Gaussian(x), Component::Gaussian(y)) => {
                    assert_eq!(x.mean(), y.mean());
                }
                _ => unreachable!(),
            }
        }
    }
}
