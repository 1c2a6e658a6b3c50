//! Evaluation metrics: transportation distance between mixing distributions,
//! model-based cluster assignment, the adjusted Rand index, and a Monte-Carlo
//! estimate of the maximum pairwise component overlap.

use nalgebra::DMatrix;
use rand::Rng;

use crate::divergence::{solve_transport, CostKind, CostMatrix};
use crate::error::{Error, Result};
use crate::mixture::{Component, Dataset, GammaComponent, GaussianComponent, MixingDistribution};

/// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at
/// zero (aggregated covariances can be near-singular).
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut root = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        root += v * v.transpose() * s;
    }
    root
}

/// Ground cost between Gaussian components: Euclidean mean gap plus the
/// Frobenius gap of the covariance square roots.
pub fn d1_gaussian(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mean_gap = (a.mean() - b.mean()).norm();
    let root_gap = (sym_sqrt(a.covariance()) - sym_sqrt(b.covariance())).norm();
    Ok(mean_gap + root_gap)
}

/// Ground cost between Gamma components: `|r - r'| + |theta - theta'|`.
pub fn d1_gamma(a: &GammaComponent, b: &GammaComponent) -> f64 {
    (a.shape() - b.shape()).abs() + (a.scale() - b.scale()).abs()
}

fn d1(a: &Component, b: &Component) -> Result<f64> {
    match (a, b) {
        (Component::Gaussian(x), Component::Gaussian(y)) => d1_gaussian(x, y),
        (Component::Gamma(x), Component::Gamma(y)) => Ok(d1_gamma(x, y)),
        _ => Err(Error::FamilyMismatch),
    }
}

/// Transportation distance between two mixing distributions under the
/// component-level ground cost; exact via the transportation simplex.
pub fn w1(g: &MixingDistribution, g2: &MixingDistribution) -> Result<f64> {
    if g.family() != g2.family() {
        return Err(Error::FamilyMismatch);
    }
    let entries = DMatrix::from_fn(g.order(), g2.order(), |i, j| {
        d1(&g.components()[i], &g2.components()[j]).unwrap_or(f64::NAN)
    });
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite ground cost".into()));
    }
    let costs = CostMatrix::new(entries, CostKind::D1)?;
    Ok(solve_transport(g.weights(), g2.weights(), &costs)?.cost)
}

/// Maximum-posterior component assignment for every row, in log space; ties
/// break to the lowest index.
pub fn cluster_assign(g: &MixingDistribution, data: &Dataset) -> Result<Vec<usize>> {
    if data.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: data.dim(),
        });
    }
    let cols = data.to_cols();
    let logf = g.component_log_density_matrix(&cols);
    let log_w: Vec<f64> = g
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    let n = data.len();
    let k = g.order();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..k {
            let v = log_w[j] + logf[(i, j)];
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Adjusted Rand index between two labelings. The binomial sums are taken in
/// exact integer arithmetic with a single final division; the degenerate
/// zero-denominator case (both clusterings trivial, hence identical) maps
/// to 1.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Metric(format!(
            "label lengths differ: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::Metric("need at least two observations".into()));
    }
    let ka = labels_a.iter().max().unwrap() + 1;
    let kb = labels_b.iter().max().unwrap() + 1;
    let mut contingency = vec![vec![0u64; kb]; ka];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        contingency[a][b] += 1;
    }
    let choose2 = |x: u64| -> u128 { (x as u128) * (x.saturating_sub(1) as u128) / 2 };
    let mut sum_ij: u128 = 0;
    for row in &contingency {
        for &v in row {
            sum_ij += choose2(v);
        }
    }
    let row_sums: Vec<u64> = contingency.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kb).map(|j| contingency.iter().map(|r| r[j]).sum()).collect();
    let sum_a: u128 = row_sums.iter().map(|&v| choose2(v)).sum();
    let sum_b: u128 = col_sums.iter().map(|&v| choose2(v)).sum();
    let total: u128 = choose2(n as u64);

    // ARI = (sum_ij - sum_a sum_b / total) / ((sum_a + sum_b)/2 - sum_a sum_b / total);
    // scale both sides by 2 * total to stay in integers.
    let numerator = 2i128 * (sum_ij as i128) * (total as i128) - 2i128 * (sum_a as i128) * (sum_b as i128);
    let denominator =
        (sum_a as i128 + sum_b as i128) * (total as i128) - 2i128 * (sum_a as i128) * (sum_b as i128);
    if denominator == 0 {
        return Ok(1.0);
    }
    Ok(numerator as f64 / denominator as f64)
}

/// Monte-Carlo estimate of the maximum pairwise overlap.
#[derive(Debug, Clone, Copy)]
pub struct MaxOmegaEstimate {
    pub value: f64,
    /// Binomial standard error of the reported maximum.
    pub std_error: f64,
}

/// For each ordered pair, `o(j|i)` is the probability that component `j`
/// out-scores component `i` on a draw from component `i` (strict inequality;
/// ties between identical components make the estimate land near 0 or 1 and
/// are not resolved further). The maximum of `o(j|i) + o(i|j)` over
/// unordered pairs is returned with its standard error.
pub fn max_omega<R: Rng>(
    g: &MixingDistribution,
    n_mc: usize,
    rng: &mut R,
) -> Result<MaxOmegaEstimate> {
    let k = g.order();
    if k < 2 {
        return Err(Error::Metric("overlap needs at least two components".into()));
    }
    if n_mc < 1_000 {
        return Err(Error::Metric("need at least 1000 Monte-Carlo draws".into()));
    }
    // o[i][j] = P(w_i f_i(X) < w_j f_j(X)), X ~ component i.
    let mut o = vec![vec![0.0f64; k]; k];
    let log_w: Vec<f64> = g
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    for i in 0..k {
        let single = MixingDistribution::new(vec![1.0], vec![g.components()[i].clone()])?;
        let draws = single.sample(n_mc, rng)?;
        let cols = draws.to_cols();
        let logf = g.component_log_density_matrix(&cols);
        for row in 0..n_mc {
            let own = log_w[i] + logf[(row, i)];
            for j in 0..k {
                if j != i && own < log_w[j] + logf[(row, j)] {
                    o[i][j] += 1.0;
                }
            }
        }
        for j in 0..k {
            o[i][j] /= n_mc as f64;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_pair = (0, 1);
    for i in 0..k {
        for j in (i + 1)..k {
            let s = o[i][j] + o[j][i];
            if s > best {
                best = s;
                best_pair = (i, j);
            }
        }
    }
    let (i, j) = best_pair;
    let var = o[i][j] * (1.0 - o[i][j]) / n_mc as f64 + o[j][i] * (1.0 - o[j][i]) / n_mc as f64;
    Ok(MaxOmegaEstimate {
        value: best,
        std_error: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use nalgebra::DVector;

    fn gauss(mean: &[f64], cov_rows: &[f64]) -> GaussianComponent {
        let d = mean.len();
        GaussianComponent::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_rows),
        )
        .unwrap()
    }

    fn gaussian_1d(mean: f64, var: f64) -> Component {
        Component::Gaussian(gauss(&[mean], &[var]))
    }

    #[test]
    fn d1_gaussian_zero_on_equal() {
        let a = gauss(&[1.0, 2.0], &[1.0, 0.2, 0.2, 2.0]);
        assert!(d1_gaussian(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn d1_gaussian_scalar_case() {
        // Mean gap 2, variances 1 and 4: 2 + |1 - 2| = 3.
        let a = gauss(&[0.0], &[1.0]);
        let b = gauss(&[2.0], &[4.0]);
        assert!((d1_gaussian(&a, &b).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn d1_gaussian_scaled_covariance() {
        // Sigma_b = 4 Sigma_a with equal means: the gap is ||Sigma_a^{1/2}||_F.
        let sigma = [1.3, 0.4, 0.4, 0.8];
        let a = gauss(&[0.0, 0.0], &sigma);
        let b = gauss(&[0.0, 0.0], &sigma.map(|v| 4.0 * v));
        let expected = sym_sqrt(a.covariance()).norm();
        assert!((d1_gaussian(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 0.9]);
        let r = sym_sqrt(&m);
        let back = &r * &r;
        assert!((&back - &m).norm() / m.norm() < 1e-8);
    }

    #[test]
    fn d1_gamma_values() {
        let a = GammaComponent::new(1.0, 1.0).unwrap();
        let b = GammaComponent::new(8.0, 6.0).unwrap();
        assert_eq!(d1_gamma(&a, &a), 0.0);
        assert_eq!(d1_gamma(&a, &b), 12.0);
        assert_eq!(d1_gamma(&a, &b), d1_gamma(&b, &a));
    }

    #[test]
    fn w1_zero_against_itself_and_permutation() {
        let g = MixingDistribution::new(
            vec![0.3, 0.7],
            vec![gaussian_1d(0.0, 1.0), gaussian_1d(4.0, 2.0)],
        )
        .unwrap();
        assert!(w1(&g, &g).unwrap() < 1e-9);
        let p = g.permuted(&[1, 0]).unwrap();
        assert!(w1(&g, &p).unwrap() < 1e-9);
    }

    #[test]
    fn w1_split_atom() {
        // G = 0.5 delta_a + 0.5 delta_b vs delta_a with D1(a, b) = 1:
        // half the mass moves distance 1.
        let a = gaussian_1d(0.0, 1.0);
        let b = gaussian_1d(1.0, 1.0);
        let g = MixingDistribution::new(vec![0.5, 0.5], vec![a.clone(), b]).unwrap();
        let h = MixingDistribution::new(vec![1.0], vec![a]).unwrap();
        assert!((w1(&g, &h).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn cluster_assign_single_component() {
        let g = MixingDistribution::new(vec![1.0], vec![gaussian_1d(0.0, 1.0)]).unwrap();
        let data = g.sample(10, &mut seed::rng(1, &[])).unwrap();
        assert!(cluster_assign(&g, &data).unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn cluster_assign_separated_means() {
        let g = MixingDistribution::new(
            vec![0.5, 0.5],
            vec![gaussian_1d(-5.0, 1.0), gaussian_1d(5.0, 1.0)],
        )
        .unwrap();
        let rows = DMatrix::from_row_slice(2, 1, &[-5.0, 5.0]);
        let data = Dataset::new(rows, None).unwrap();
        assert_eq!(cluster_assign(&g, &data).unwrap(), vec![0, 1]);
    }

    #[test]
    fn cluster_assign_tie_breaks_low() {
        let g = MixingDistribution::new(
            vec![0.5, 0.5],
            vec![gaussian_1d(0.0, 1.0), gaussian_1d(0.0, 1.0)],
        )
        .unwrap();
        let data = g.sample(7, &mut seed::rng(2, &[])).unwrap();
        assert!(cluster_assign(&g, &data).unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn ari_identical_is_one() {
        let l = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(ari(&l, &l).unwrap(), 1.0);
    }

    #[test]
    fn ari_hand_evaluated_case() {
        // A = (1,1,2,2), B = (1,2,1,2): index 0, expected 2/3, max 2 -> -0.5.
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        assert_eq!(ari(&a, &b).unwrap(), -0.5);
    }

    #[test]
    fn ari_symmetric() {
        let a = vec![0, 0, 1, 2, 2, 1, 0];
        let b = vec![1, 1, 0, 0, 2, 2, 1];
        assert_eq!(ari(&a, &b).unwrap(), ari(&b, &a).unwrap());
    }

    #[test]
    fn ari_degenerate_identical_trivial() {
        let a = vec![0, 0, 0];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ari_rejects_length_mismatch() {
        assert!(ari(&[0, 1], &[0, 1, 2]).is_err());
    }

    #[test]
    fn max_omega_far_apart_is_tiny() {
        let g = MixingDistribution::new(
            vec![0.5, 0.5],
            vec![gaussian_1d(0.0, 1.0), gaussian_1d(100.0, 1.0)],
        )
        .unwrap();
        let est = max_omega(&g, 20_000, &mut seed::rng(3, &[])).unwrap();
        assert!(est.value < 0.001, "overlap {}", est.value);
    }

    #[test]
    fn max_omega_identical_components_degenerate() {
        // Strict inequality on tied scores: the estimate collapses to one of
        // the extremes.
        let g = MixingDistribution::new(
            vec![0.5, 0.5],
            vec![gaussian_1d(0.0, 1.0), gaussian_1d(0.0, 1.0)],
        )
        .unwrap();
        let est = max_omega(&g, 5_000, &mut seed::rng(4, &[])).unwrap();
        assert!(est.value < 0.01 || est.value > 0.99, "estimate {}", est.value);
    }

    #[test]
    fn max_omega_decreases_with_separation() {
        let at = |gap: f64| {
            let g = MixingDistribution::new(
                vec![0.5, 0.5],
                vec![gaussian_1d(0.0, 1.0), gaussian_1d(gap, 1.0)],
            )
            .unwrap();
            max_omega(&g, 100_000, &mut seed::rng(5, &[gap as u64])).unwrap().value
        };
        let (o1, o2, o4) = (at(1.0), at(2.0), at(4.0));
        assert!(o1 > o2 && o2 > o4, "overlaps {o1} {o2} {o4}");
    }
}
