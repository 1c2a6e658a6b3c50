//! Fixed-order vectorization of mixing distributions and permutation
//! alignment against a reference.
//!
//! A mixture of order `K` with parameter dimension `p` per component flattens
//! to `(w_1, ..., w_{K-1}, theta_1, ..., theta_K)`, dropping the last weight
//! (it is redundant on the simplex). Alignment searches all `K!` component
//! orders for the one whose vectorization is closest to the reference in
//! Euclidean norm.

use crate::error::{Error, Result};
use crate::mixture::component::{Component, Family};
use crate::mixture::mixing::MixingDistribution;

/// Orders above this are rejected: the alignment search is brute force.
pub const MAX_ALIGN_ORDER: usize = 10;

/// Structural metadata needed to reverse a vectorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub family: Family,
    pub order: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn of(g: &MixingDistribution) -> Self {
        ParamLayout {
            family: g.family(),
            order: g.order(),
            dim: g.dim(),
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.family {
            Family::Gaussian => self.dim + self.dim * (self.dim + 1) / 2,
            Family::Gamma => 2,
        }
    }

    /// Total vector length `p*K + (K-1)`.
    pub fn len(&self) -> usize {
        self.param_dim() * self.order + self.order - 1
    }
}

/// A flattened mixture together with the component ordering that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    permutation: Vec<usize>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    /// Rebuild the mixture this vector encodes (in vector order). The last
    /// weight is recovered as one minus the rest.
    pub fn to_mixture(&self) -> Result<MixingDistribution> {
        let k = self.layout.order;
        let p = self.layout.param_dim();
        let mut weights = Vec::with_capacity(k);
        let mut rest = 1.0;
        for i in 0..k - 1 {
            weights.push(self.values[i]);
            rest -= self.values[i];
        }
        if rest < -WEIGHT_RECOVERY_TOL {
            return Err(Error::InvalidWeights(format!(
                "recovered final weight is negative: {rest}"
            )));
        }
        weights.push(rest.max(0.0));
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let start = k - 1 + j * p;
            components.push(Component::from_flat(
                self.layout.family,
                self.layout.dim,
                &self.values[start..start + p],
            )?);
        }
        MixingDistribution::new(weights, components)
    }
}

const WEIGHT_RECOVERY_TOL: f64 = 1e-10;

/// Flatten `g` with its components taken in `perm` order.
pub fn vectorize_permuted(g: &MixingDistribution, perm: &[usize]) -> Result<ParamVector> {
    let k = g.order();
    if perm.len() != k {
        return Err(Error::OrderMismatch {
            left: perm.len(),
            right: k,
        });
    }
    let layout = ParamLayout::of(g);
    let mut values = Vec::with_capacity(layout.len());
    for &p in &perm[..k - 1] {
        values.push(g.weights()[p]);
    }
    for &p in perm {
        g.components()[p].flatten_into(&mut values);
    }
    Ok(ParamVector {
        values,
        permutation: perm.to_vec(),
        layout,
    })
}

/// Flatten `g` in its stored component order.
pub fn vectorize(g: &MixingDistribution) -> ParamVector {
    let perm: Vec<usize> = (0..g.order()).collect();
    vectorize_permuted(g, &perm).expect("identity permutation is valid")
}

/// Result of aligning a mixture against a reference.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub vector: ParamVector,
    pub permutation: Vec<usize>,
    pub residual: f64,
}

/// Find the component order of `g` whose vectorization is closest to that of
/// `reference`, searching all `K!` permutations. Ties break to the
/// lexicographically smallest permutation.
pub fn align(g: &MixingDistribution, reference: &MixingDistribution) -> Result<Alignment> {
    if g.family() != reference.family() {
        return Err(Error::FamilyMismatch);
    }
    if g.order() != reference.order() {
        return Err(Error::OrderMismatch {
            left: g.order(),
            right: reference.order(),
        });
    }
    if g.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: g.dim(),
        });
    }
    let k = g.order();
    if k > MAX_ALIGN_ORDER {
        return Err(Error::UnsupportedOrder(k, MAX_ALIGN_ORDER));
    }

    // Position cost is separable: cost[i][pos] is the squared contribution of
    // placing source component i at position pos.
    let mut flat_g: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut flat_r: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut a = Vec::new();
        g.components()[j].flatten_into(&mut a);
        flat_g.push(a);
        let mut b = Vec::new();
        reference.components()[j].flatten_into(&mut b);
        flat_r.push(b);
    }
    let mut cost = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for pos in 0..k {
            let theta: f64 = flat_g[i]
                .iter()
                .zip(&flat_r[pos])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let w = if pos < k - 1 {
                let diff = g.weights()[i] - reference.weights()[pos];
                diff * diff
            } else {
                0.0
            };
            cost[i][pos] = theta + w;
        }
    }

    // Depth-first search in lexicographic order with partial-sum pruning;
    // strict improvement keeps the lexicographically smallest optimum.
    let mut best = f64::INFINITY;
    let mut best_perm = vec![0usize; k];
    let mut current = vec![0usize; k];
    let mut used = vec![false; k];
    fn search(
        pos: usize,
        acc: f64,
        k: usize,
        cost: &[Vec<f64>],
        used: &mut [bool],
        current: &mut [usize],
        best: &mut f64,
        best_perm: &mut [usize],
    ) {
        if acc >= *best {
            return;
        }
        if pos == k {
            *best = acc;
            best_perm.copy_from_slice(current);
            return;
        }
        for i in 0..k {
            if used[i] {
                continue;
            }
            used[i] = true;
            current[pos] = i;
            search(pos + 1, acc + cost[i][pos], k, cost, used, current, best, best_perm);
            used[i] = false;
        }
    }
    search(0, 0.0, k, &cost, &mut used, &mut current, &mut best, &mut best_perm);

    let vector = vectorize_permuted(g, &best_perm)?;
    Ok(Alignment {
        vector,
        permutation: best_perm,
        residual: best.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::component::{GammaComponent, GaussianComponent};
    use nalgebra::{DMatrix, DVector};

    fn gaussian_1d(mean: f64, var: f64) -> Component {
        Component::Gaussian(
            GaussianComponent::new(
                DVector::from_element(1, mean),
                DMatrix::from_element(1, 1, var),
            )
            .unwrap(),
        )
    }

    fn two_component() -> MixingDistribution {
        MixingDistribution::new(
            vec![0.3, 0.7],
            vec![gaussian_1d(-1.0, 1.0), gaussian_1d(2.0, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn vectorize_roundtrip_gaussian() {
        let g = two_component();
        let v = vectorize(&g);
        assert_eq!(v.values().len(), 1 + 2 * 2); // (K-1) + K*(d + d(d+1)/2)
        let back = v.to_mixture().unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn vectorize_roundtrip_gamma() {
        let g = MixingDistribution::new(
            vec![0.4, 0.6],
            vec![
                Component::Gamma(GammaComponent::new(1.0, 1.0).unwrap()),
                Component::Gamma(GammaComponent::new(8.0, 6.0).unwrap()),
            ],
        )
        .unwrap();
        let back = vectorize(&g).to_mixture().unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn align_identity_on_equal_inputs() {
        let g = two_component();
        let a = align(&g, &g).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.residual, 0.0);
    }

    #[test]
    fn align_single_component_is_identity() {
        let g = MixingDistribution::new(vec![1.0], vec![gaussian_1d(0.0, 1.0)]).unwrap();
        let a = align(&g, &g).unwrap();
        assert_eq!(a.permutation, vec![0]);
    }

    #[test]
    fn align_recovers_swap() {
        // Both orderings enumerated; the swap must win with zero residual.
        let reference = two_component();
        let swapped = reference.permuted(&[1, 0]).unwrap();
        let a = align(&swapped, &reference).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert!(a.residual < 1e-12);
        assert_eq!(a.vector.values(), vectorize(&reference).values());
    }

    #[test]
    fn align_rejects_large_order() {
        let comps: Vec<Component> = (0..11).map(|i| gaussian_1d(i as f64, 1.0)).collect();
        let w = vec![1.0 / 11.0; 11];
        let g = MixingDistribution::new(w, comps).unwrap();
        assert!(matches!(align(&g, &g), Err(Error::UnsupportedOrder(11, _))));
    }

    #[test]
    fn align_rejects_order_mismatch() {
        let g = two_component();
        let single = MixingDistribution::new(vec![1.0], vec![gaussian_1d(0.0, 1.0)]).unwrap();
        assert!(align(&g, &single).is_err());
    }
}
