//! Penalized-MLE fitting of a fixed-order mixture on one machine via EM.
//!
//! The Gaussian M-step uses the closed-form penalized covariance update
//! `Sigma_k = (2 a_n S_x + S_k) / (2 a_n + n w_k)`, which keeps every
//! covariance bounded away from singularity. The Gamma M-step maximizes the
//! weighted penalized log-likelihood per component with the scale profiled
//! out in closed form and a safeguarded Newton iteration in the shape.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::mixture::{
    Component, Dataset, Family, GammaComponent, GaussianComponent, MixingDistribution,
};
use crate::numeric::log_sum_exp;

/// Weight floor applied inside E-step log computations to avoid -inf.
const WEIGHT_FLOOR: f64 = 1e-8;

/// Shape bracket for the Gamma M-step.
const SHAPE_MIN: f64 = 0.5 + 1e-6;
const SHAPE_MAX: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Convergence threshold on the per-observation penalized log-likelihood
    /// change.
    pub tol: f64,
    /// Penalty strength `a_n`; `None` selects `n^{-1/2}`.
    pub penalty: Option<f64>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 1000,
            tol: 1e-6,
            penalty: None,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Em("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Em("tol must be positive".into()));
        }
        if let Some(a) = self.penalty {
            if !(a >= 0.0) {
                return Err(Error::Em("penalty strength must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn strength(&self, n: usize) -> f64 {
        self.penalty.unwrap_or_else(|| (n as f64).powf(-0.5))
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub estimate: MixingDistribution,
    pub iterations: usize,
    pub final_penalized_ll: f64,
    pub converged: bool,
    /// Penalized log-likelihood of each visited iterate, ending at the
    /// returned estimate. Non-decreasing up to float slack.
    pub pll_trace: Vec<f64>,
}

/// Posterior component memberships. Entry `(i, k)` is the probability that
/// observation `i` came from component `k` under `g`; each row sums to one.
pub fn responsibilities(g: &MixingDistribution, data: &Dataset) -> Result<DMatrix<f64>> {
    if data.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: data.dim(),
        });
    }
    let cols = data.to_cols();
    Ok(e_step(g, &cols)?.0)
}

/// Responsibilities plus the floored-weight log-likelihood, computed in log
/// space.
fn e_step(g: &MixingDistribution, cols: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = cols.ncols();
    let k = g.order();
    let mut work = g.component_log_density_matrix(cols);
    let log_w: Vec<f64> = g.weights().iter().map(|w| w.max(WEIGHT_FLOOR).ln()).collect();
    let mut loglik = 0.0;
    let mut terms = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            terms[j] = log_w[j] + work[(i, j)];
        }
        let lse = log_sum_exp(&terms);
        if !lse.is_finite() {
            return Err(Error::DensityUnderflow { row: i });
        }
        loglik += lse;
        for j in 0..k {
            work[(i, j)] = (terms[j] - lse).exp();
        }
    }
    Ok((work, loglik))
}

/// Penalized MLE of a `k`-component Gaussian mixture by EM from `init`.
pub fn pmle_em_gaussian(
    data: &Dataset,
    k: usize,
    init: &MixingDistribution,
    cfg: &EmConfig,
) -> Result<EmResult> {
    cfg.validate()?;
    if init.family() != Family::Gaussian {
        return Err(Error::FamilyMismatch);
    }
    if init.order() != k {
        return Err(Error::OrderMismatch {
            left: init.order(),
            right: k,
        });
    }
    if data.dim() != init.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.dim(),
            got: data.dim(),
        });
    }
    let n = data.len();
    let d = data.dim();
    if n <= d {
        return Err(Error::Em(format!(
            "need more observations than dimensions, got n = {n}, d = {d}"
        )));
    }
    let a_n = cfg.strength(n);
    let cols = data.to_cols();

    // Sample covariance (MLE denominator) and its Cholesky factor, both used
    // by the penalty and by the covariance update.
    let mean = cols.column_mean();
    let mut centered = cols.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let s_x = (&centered * centered.transpose()) / n as f64;
    let c_x = nalgebra::Cholesky::new(s_x.clone())
        .ok_or_else(|| Error::Em("sample covariance is singular".into()))?
        .l();

    let penalty = |g: &MixingDistribution| -> f64 {
        if a_n == 0.0 {
            return 0.0;
        }
        g.components()
            .iter()
            .map(|c| match c {
                Component::Gaussian(gc) => {
                    let w = gc
                        .chol_lower()
                        .solve_lower_triangular(&c_x)
                        .expect("positive diagonal");
                    w.norm_squared() + gc.log_det_covariance()
                }
                Component::Gamma(_) => unreachable!("family checked"),
            })
            .sum()
    };

    let m_step = |resp: &DMatrix<f64>, prev: &MixingDistribution| -> Result<MixingDistribution> {
        let mut weights = Vec::with_capacity(k);
        let mut comps = Vec::with_capacity(k);
        let floor_factor = 2.0 * a_n / (n as f64 + 2.0 * a_n);
        for j in 0..k {
            let resp_j = resp.column(j);
            let total: f64 = resp_j.sum();
            weights.push(total / n as f64);
            if total < 1e-12 {
                comps.push(prev.components()[j].clone());
                continue;
            }
            let mu = (&cols * &resp_j) / total;
            let mut diff = cols.clone();
            for mut c in diff.column_iter_mut() {
                c -= &mu;
            }
            let mut scaled = diff.clone();
            for (mut c, r) in scaled.column_iter_mut().zip(resp_j.iter()) {
                c *= *r;
            }
            let scatter = &scaled * diff.transpose();
            let sigma = (&s_x * (2.0 * a_n) + scatter) / (2.0 * a_n + total);
            #[cfg(debug_assertions)]
            {
                // Penalized update keeps Sigma_k above (2 a_n / (n + 2 a_n)) S_x.
                let gap = &sigma - &s_x * floor_factor;
                let min_eig = gap.symmetric_eigenvalues().min();
                debug_assert!(min_eig >= -1e-10, "covariance floor violated: {min_eig}");
            }
            let _ = floor_factor;
            comps.push(Component::Gaussian(GaussianComponent::new(mu, sigma)?));
        }
        MixingDistribution::new(weights, comps)
    };

    run_em(init, cfg, a_n, n, &cols, &penalty, &m_step)
}

/// Penalized MLE of a `k`-component Gamma mixture by EM from `init`.
/// Requires strictly positive one-dimensional observations.
pub fn pmle_em_gamma(
    data: &Dataset,
    k: usize,
    init: &MixingDistribution,
    cfg: &EmConfig,
) -> Result<EmResult> {
    cfg.validate()?;
    if init.family() != Family::Gamma {
        return Err(Error::FamilyMismatch);
    }
    if init.order() != k {
        return Err(Error::OrderMismatch {
            left: init.order(),
            right: k,
        });
    }
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.dim(),
        });
    }
    if data.rows().iter().any(|&x| x <= 0.0) {
        return Err(Error::Em("gamma mixtures require positive observations".into()));
    }
    let n = data.len();
    let a_n = cfg.strength(n);
    let cols = data.to_cols();
    let xs: Vec<f64> = cols.row(0).iter().cloned().collect();
    let log_xs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();

    let penalty = |g: &MixingDistribution| -> f64 {
        g.components()
            .iter()
            .map(|c| match c {
                Component::Gamma(gc) => gc.shape() - gc.shape().ln(),
                Component::Gaussian(_) => unreachable!("family checked"),
            })
            .sum()
    };

    let m_step = |resp: &DMatrix<f64>, prev: &MixingDistribution| -> Result<MixingDistribution> {
        let mut weights = Vec::with_capacity(k);
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let resp_j = resp.column(j);
            let total: f64 = resp_j.sum();
            weights.push(total / n as f64);
            if total < 1e-12 {
                comps.push(prev.components()[j].clone());
                continue;
            }
            let sum_x: f64 = resp_j.iter().zip(&xs).map(|(r, x)| r * x).sum();
            let sum_log: f64 = resp_j.iter().zip(&log_xs).map(|(r, lx)| r * lx).sum();
            let prev_shape = match &prev.components()[j] {
                Component::Gamma(gc) => gc.shape(),
                Component::Gaussian(_) => unreachable!(),
            };
            let shape = solve_gamma_shape(total, sum_x, sum_log, a_n, prev_shape);
            let scale = sum_x / (shape * total);
            comps.push(Component::Gamma(GammaComponent::new(shape, scale)?));
        }
        MixingDistribution::new(weights, comps)
    };

    run_em(init, cfg, a_n, n, &cols, &penalty, &m_step)
}

fn run_em(
    init: &MixingDistribution,
    cfg: &EmConfig,
    a_n: f64,
    n: usize,
    cols: &DMatrix<f64>,
    penalty: &dyn Fn(&MixingDistribution) -> f64,
    m_step: &dyn Fn(&DMatrix<f64>, &MixingDistribution) -> Result<MixingDistribution>,
) -> Result<EmResult> {
    let mut g = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let (resp, ll) = e_step(&g, cols)?;
        let pll = ll - a_n * penalty(&g);
        if let Some(&prev) = trace.last() {
            if ((pll - prev) / n as f64).abs() < cfg.tol {
                trace.push(pll);
                converged = true;
                break;
            }
        }
        trace.push(pll);
        g = m_step(&resp, &g)?;
        iterations += 1;
    }
    if !converged {
        // Price the final iterate so the trace ends at the returned estimate.
        let (_, ll) = e_step(&g, cols)?;
        trace.push(ll - a_n * penalty(&g));
    }
    Ok(EmResult {
        final_penalized_ll: *trace.last().unwrap(),
        estimate: g,
        iterations,
        converged,
        pll_trace: trace,
    })
}

/// Maximize `sum_i r_i log f(x_i; r, theta) - a_n (r - log r)` in `r` with
/// `theta` profiled out as `sum_i r_i x_i / (r sum_i r_i)`. The profile
/// gradient is strictly decreasing, so Newton with a bisection safeguard on a
/// maintained bracket always converges.
fn solve_gamma_shape(total: f64, sum_x: f64, sum_log: f64, a_n: f64, start: f64) -> f64 {
    let grad = |r: f64| -> f64 {
        let log_scale = (sum_x / (r * total)).ln();
        sum_log - total * log_scale - total * digamma(r) - a_n * (1.0 - 1.0 / r)
    };
    let grad_deriv = |r: f64| -> f64 { total / r - total * trigamma(r) - a_n / (r * r) };

    let (mut lo, mut hi) = (SHAPE_MIN, SHAPE_MAX);
    if grad(lo) <= 0.0 {
        return lo;
    }
    if grad(hi) >= 0.0 {
        return hi;
    }
    let mut r = start.clamp(lo, hi);
    for _ in 0..100 {
        let g = grad(r);
        if g > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
        let step = g / grad_deriv(r);
        let mut next = r - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() < 1e-14 * r.max(1.0) {
            r = next;
            break;
        }
        r = next;
    }
    r.clamp(SHAPE_MIN, SHAPE_MAX)
}

/// Trigamma via the ascending recurrence and the asymptotic tail series.
fn trigamma(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < 20.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2 z^2) + 1/(6 z^3) - 1/(30 z^5) + 1/(42 z^7) - 1/(30 z^9)
    acc + inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 - inv2 / 30.0)))))
}

/// K-means++ seeding plus one hard-assignment M-step, the default
/// initialization when no starting mixture is supplied.
pub fn kmeanspp_init_gaussian<R: Rng>(
    data: &Dataset,
    k: usize,
    rng: &mut R,
) -> Result<MixingDistribution> {
    let n = data.len();
    let d = data.dim();
    if n <= d {
        return Err(Error::Em(format!(
            "need more observations than dimensions, got n = {n}, d = {d}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Em(format!("cannot seed {k} clusters from {n} rows")));
    }
    let cols = data.to_cols();
    let centers = kmeanspp_centers(&cols, k, rng);
    let assign = hard_assign(&cols, &centers);

    let mean = cols.column_mean();
    let mut centered = cols.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let s_x = (&centered * centered.transpose()) / n as f64;
    let shrink = (n as f64).powf(-0.5);

    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        if members.is_empty() {
            weights.push(1e-6);
            comps.push(Component::Gaussian(GaussianComponent::new(
                centers[j].clone(),
                s_x.clone(),
            )?));
            continue;
        }
        let count = members.len() as f64;
        weights.push(count / n as f64);
        let mut mu = DVector::zeros(d);
        for &i in &members {
            mu += cols.column(i);
        }
        mu /= count;
        let mut scatter = DMatrix::zeros(d, d);
        for &i in &members {
            let diff = cols.column(i) - &mu;
            scatter += &diff * diff.transpose();
        }
        let sigma = (&s_x * (2.0 * shrink) + scatter) / (2.0 * shrink + count);
        comps.push(Component::Gaussian(GaussianComponent::new(mu, sigma)?));
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    MixingDistribution::new(weights, comps)
}

/// One-dimensional k-means++ seeding with per-cluster method-of-moments
/// Gamma parameters.
pub fn kmeanspp_init_gamma<R: Rng>(
    data: &Dataset,
    k: usize,
    rng: &mut R,
) -> Result<MixingDistribution> {
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.dim(),
        });
    }
    if data.rows().iter().any(|&x| x <= 0.0) {
        return Err(Error::Em("gamma mixtures require positive observations".into()));
    }
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::Em(format!("cannot seed {k} clusters from {n} rows")));
    }
    let cols = data.to_cols();
    let centers = kmeanspp_centers(&cols, k, rng);
    let assign = hard_assign(&cols, &centers);
    let xs: Vec<f64> = cols.row(0).iter().cloned().collect();

    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<&f64> = xs.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(x, _)| x).collect();
        let (m, v, w) = if members.is_empty() {
            (centers[j][0].max(1e-6), 1.0, 1e-6)
        } else {
            let count = members.len() as f64;
            let m = members.iter().map(|&&x| x).sum::<f64>() / count;
            let v = members.iter().map(|&&x| (x - m) * (x - m)).sum::<f64>() / count;
            (m, v, count / n as f64)
        };
        let v = v.max(1e-12);
        let shape = (m * m / v).clamp(SHAPE_MIN, SHAPE_MAX);
        let scale = (v / m).max(1e-12);
        weights.push(w);
        comps.push(Component::Gamma(GammaComponent::new(shape, scale)?));
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    MixingDistribution::new(weights, comps)
}

fn kmeanspp_centers<R: Rng>(cols: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = cols.ncols();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centers.push(cols.column(first).into_owned());
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| (cols.column(i) - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                u -= d2;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = cols.column(next).into_owned();
        for i in 0..n {
            let d2 = (cols.column(i) - &c).norm_squared();
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
        centers.push(c);
    }
    centers
}

fn hard_assign(cols: &DMatrix<f64>, centers: &[DVector<f64>]) -> Vec<usize> {
    (0..cols.ncols())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d2 = (cols.column(i) - c).norm_squared();
                if d2 < best_d {
                    best_d = d2;
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::align;
    use crate::seed;

    fn gaussian_1d(mean: f64, var: f64) -> Component {
        Component::Gaussian(
            GaussianComponent::new(
                DVector::from_element(1, mean),
                DMatrix::from_element(1, 1, var),
            )
            .unwrap(),
        )
    }

    fn mixture_1d(spec: &[(f64, f64, f64)]) -> MixingDistribution {
        MixingDistribution::new(
            spec.iter().map(|s| s.0).collect(),
            spec.iter().map(|s| gaussian_1d(s.1, s.2)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn responsibilities_single_component_all_one() {
        let g = mixture_1d(&[(1.0, 0.0, 1.0)]);
        let data = g.sample(20, &mut seed::rng(1, &[])).unwrap();
        let r = responsibilities(&g, &data).unwrap();
        assert!(r.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn responsibilities_symmetric_midpoint() {
        let g = mixture_1d(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]);
        let data = Dataset::new(DMatrix::from_element(1, 1, 0.0), None).unwrap();
        let r = responsibilities(&g, &data).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((r[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_identical_components_reduce_to_weights() {
        let g = mixture_1d(&[(0.9, 1.0, 2.0), (0.1, 1.0, 2.0)]);
        let data = g.sample(15, &mut seed::rng(2, &[])).unwrap();
        let r = responsibilities(&g, &data).unwrap();
        for i in 0..15 {
            assert!((r[(i, 0)] - 0.9).abs() < 1e-12);
            assert!((r[(i, 1)] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let g = mixture_1d(&[(0.3, -1.0, 0.5), (0.7, 4.0, 2.0)]);
        let data = g.sample(50, &mut seed::rng(3, &[])).unwrap();
        let r = responsibilities(&g, &data).unwrap();
        for i in 0..50 {
            let s: f64 = r.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_component_unpenalized_fit_matches_sample_moments() {
        let truth = mixture_1d(&[(1.0, 2.0, 1.5)]);
        let data = truth.sample(200, &mut seed::rng(4, &[])).unwrap();
        let cfg = EmConfig {
            max_iters: 1,
            penalty: Some(0.0),
            ..EmConfig::default()
        };
        let fit = pmle_em_gaussian(&data, 1, &truth, &cfg).unwrap();
        assert_eq!(fit.iterations, 1);
        let mean: f64 = data.rows().column(0).mean();
        let var: f64 = data
            .rows()
            .column(0)
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / 200.0;
        match &fit.estimate.components()[0] {
            Component::Gaussian(g) => {
                assert!((g.mean()[0] - mean).abs() < 1e-12);
                assert!((g.covariance()[(0, 0)] - var).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gaussian_pll_trace_is_monotone() {
        let truth = mixture_1d(&[(0.4, -3.0, 1.0), (0.6, 3.0, 0.7)]);
        let data = truth.sample(500, &mut seed::rng(5, &[])).unwrap();
        let init = kmeanspp_init_gaussian(&data, 2, &mut seed::rng(6, &[])).unwrap();
        let fit = pmle_em_gaussian(&data, 2, &init, &EmConfig::default()).unwrap();
        for w in fit.pll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace decreased: {} -> {}", w[0], w[1]);
        }
        assert!(fit.converged);
    }

    #[test]
    fn n_not_larger_than_d_rejected() {
        let rows = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let data = Dataset::new(rows, None).unwrap();
        let init = MixingDistribution::new(
            vec![1.0],
            vec![Component::Gaussian(
                GaussianComponent::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap(),
            )],
        )
        .unwrap();
        assert!(pmle_em_gaussian(&data, 1, &init, &EmConfig::default()).is_err());
    }

    #[test]
    fn gamma_fit_recovers_exponential() {
        let truth = MixingDistribution::new(
            vec![1.0],
            vec![Component::Gamma(GammaComponent::new(1.0, 1.0).unwrap())],
        )
        .unwrap();
        let data = truth.sample(100_000, &mut seed::rng(7, &[])).unwrap();
        let cfg = EmConfig {
            penalty: Some(0.0),
            ..EmConfig::default()
        };
        let fit = pmle_em_gamma(&data, 1, &truth, &cfg).unwrap();
        match &fit.estimate.components()[0] {
            Component::Gamma(g) => {
                assert!((g.shape() - 1.0).abs() < 0.05, "shape {}", g.shape());
                assert!((g.scale() - 1.0).abs() < 0.05, "scale {}", g.scale());
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gamma_scale_profile_identity() {
        // With all responsibilities 1 the profiled scale is sum(x)/(n r).
        let truth = MixingDistribution::new(
            vec![1.0],
            vec![Component::Gamma(GammaComponent::new(3.0, 2.0).unwrap())],
        )
        .unwrap();
        let data = truth.sample(500, &mut seed::rng(8, &[])).unwrap();
        let cfg = EmConfig {
            penalty: Some(0.0),
            ..EmConfig::default()
        };
        let fit = pmle_em_gamma(&data, 1, &truth, &cfg).unwrap();
        let sum_x: f64 = data.rows().column(0).sum();
        match &fit.estimate.components()[0] {
            Component::Gamma(g) => {
                let expected = sum_x / (500.0 * g.shape());
                assert!((g.scale() - expected).abs() < 1e-10);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gamma_pll_trace_is_monotone() {
        let truth = MixingDistribution::new(
            vec![0.5, 0.5],
            vec![
                Component::Gamma(GammaComponent::new(2.0, 1.0).unwrap()),
                Component::Gamma(GammaComponent::new(20.0, 0.5).unwrap()),
            ],
        )
        .unwrap();
        let data = truth.sample(400, &mut seed::rng(9, &[])).unwrap();
        let init = kmeanspp_init_gamma(&data, 2, &mut seed::rng(10, &[])).unwrap();
        let fit = pmle_em_gamma(&data, 2, &init, &EmConfig::default()).unwrap();
        for w in fit.pll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn gamma_rejects_nonpositive_data() {
        let rows = DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 2.0]);
        let data = Dataset::new(rows, None).unwrap();
        let init = MixingDistribution::new(
            vec![1.0],
            vec![Component::Gamma(GammaComponent::new(1.0, 1.0).unwrap())],
        )
        .unwrap();
        assert!(pmle_em_gamma(&data, 1, &init, &EmConfig::default()).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let truth = mixture_1d(&[(0.4, -4.0, 1.0), (0.6, 4.0, 1.0)]);
        let data = truth.sample(400, &mut seed::rng(11, &[])).unwrap();
        let cfg = EmConfig::default();
        let fit = pmle_em_gaussian(&data, 2, &truth, &cfg).unwrap();
        let swapped_init = truth.permuted(&[1, 0]).unwrap();
        let fit_swapped = pmle_em_gaussian(&data, 2, &swapped_init, &cfg).unwrap();
        let aligned = align(&fit_swapped.estimate, &fit.estimate).unwrap();
        assert_eq!(aligned.permutation, vec![1, 0]);
        assert!(aligned.residual < 1e-8);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        // psi'(2) = pi^2/6 - 1
        assert!((trigamma(2.0) - (pi2_6 - 1.0)).abs() < 1e-12);
        // psi'(0.6): recurrence against psi'(1.6)
        assert!((trigamma(0.6) - (trigamma(1.6) + 1.0 / 0.36)).abs() < 1e-10);
    }
}
