//! The mixing distribution: an ordered list of weighted components.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mixture::component::{Component, Family};
use crate::mixture::dataset::Dataset;
use crate::numeric::log_sum_exp;

/// Tolerance for the simplex constraint on mixing weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// A finite mixing distribution: weights on the simplex plus one component
/// per support point, all of the same family and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDistribution {
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl MixingDistribution {
    pub fn new(weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidWeights("mixture order must be at least 1".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        let family = components[0].family();
        let dim = components[0].dim();
        for c in &components[1..] {
            if c.family() != family {
                return Err(Error::FamilyMismatch);
            }
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        Ok(MixingDistribution { weights, components })
    }

    pub fn order(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn family(&self) -> Family {
        self.components[0].family()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// The mixture with components reordered by `perm`; position `k` of the
    /// result holds component `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.order() {
            return Err(Error::OrderMismatch {
                left: perm.len(),
                right: self.order(),
            });
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidWeights("invalid permutation".into()));
            }
            seen[p] = true;
        }
        let weights = perm.iter().map(|&p| self.weights[p]).collect();
        let components = perm.iter().map(|&p| self.components[p].clone()).collect();
        MixingDistribution::new(weights, components)
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "density evaluation point",
            });
        }
        Ok(())
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Log mixture density at `x`, via log-sum-exp over the components.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Per-component log densities for every column of a `d x n` matrix.
    /// Entry `(i, k)` is `log f(x_i; theta_k)`, without the mixing weight.
    pub fn component_log_density_matrix(&self, cols: &DMatrix<f64>) -> DMatrix<f64> {
        let n = cols.ncols();
        let k = self.order();
        let mut out = DMatrix::zeros(n, k);
        for (j, c) in self.components.iter().enumerate() {
            out.set_column(j, &c.log_density_cols(cols));
        }
        out
    }

    /// Draw `n` observations, recording the component index of each row.
    ///
    /// Deterministic given the generator state: one uniform per row for the
    /// component pick, then the component's own draws.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidDataset("sample size must be at least 1".into()));
        }
        let d = self.dim();
        let mut rows = DMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let gamma_samplers: Vec<Option<rand_distr::Gamma<f64>>> = self
            .components
            .iter()
            .map(|c| match c {
                Component::Gamma(g) => Some(
                    rand_distr::Gamma::new(g.shape(), g.scale())
                        .expect("validated gamma parameters"),
                ),
                Component::Gaussian(_) => None,
            })
            .collect();
        for i in 0..n {
            let k = self.pick_component(rng);
            labels.push(k);
            match &self.components[k] {
                Component::Gaussian(g) => {
                    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let x = g.mean() + g.chol_lower() * z;
                    rows.row_mut(i).copy_from(&x.transpose());
                }
                Component::Gamma(_) => {
                    let sampler = gamma_samplers[k].as_ref().unwrap();
                    rows[(i, 0)] = sampler.sample(rng);
                }
            }
        }
        Dataset::new(rows, Some(labels))
    }

    fn pick_component<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.order() - 1
    }
}
