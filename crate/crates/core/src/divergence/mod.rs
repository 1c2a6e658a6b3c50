//! Divergences between mixture components and mixing distributions: the
//! closed-form L2 distance, component-level KL and squared-Euclidean costs,
//! and an exact transportation solver for small discrete measures.

mod transport;

pub use transport::{solve_transport, TransportPlan, MAX_TRANSPORT_SIZE};

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mixture::{Component, GammaComponent, GaussianComponent, MixingDistribution, LN_2PI};

/// What the entries of a [`CostMatrix`] measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// KL divergence between components (Gaussian only).
    Kl,
    /// Squared Euclidean distance between flattened component parameters.
    SqEuclidean,
    /// Integral of the product of two component densities.
    L2CrossIntegral,
    /// Component-level ground cost for the W1 metric.
    D1,
}

/// A nonnegative `K x K'` cost matrix tagged with its cost kind.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
    kind: CostKind,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>, kind: CostKind) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Transport("empty cost matrix".into()));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Transport(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix { entries, kind })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }
}

/// `int phi(x; mu1, S1) phi(x; mu2, S2) dx = phi(mu1; mu2, S1 + S2)`,
/// evaluated in log space through the Cholesky factor of `S1 + S2`.
pub fn l2_cross_integral_gaussian(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let d = a.dim();
    let sum = a.covariance() + b.covariance();
    let chol = nalgebra::Cholesky::new(sum).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let diff = a.mean() - b.mean();
    let z = l
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok((-0.5 * (d as f64 * LN_2PI + log_det + z.norm_squared())).exp())
}

/// Closed form of `int f(x; r1, t1) f(x; r2, t2) dx` for two Gamma densities,
/// finite whenever `r1 + r2 > 1`. Computed via log-gamma.
pub fn l2_cross_integral_gamma(a: &GammaComponent, b: &GammaComponent) -> Result<f64> {
    // Canonical argument order makes the result bitwise symmetric.
    let ((r1, t1), (r2, t2)) = {
        let p = (a.shape(), a.scale());
        let q = (b.shape(), b.scale());
        if p <= q {
            (p, q)
        } else {
            (q, p)
        }
    };
    if r1 + r2 <= 1.0 {
        return Err(Error::InvalidComponent(format!(
            "cross integral requires r1 + r2 > 1, got {} + {}",
            r1, r2
        )));
    }
    let log_val = (r2 - 1.0) * t1.ln() + (r1 - 1.0) * t2.ln() + ln_gamma(r1 + r2 - 1.0)
        - (r1 + r2 - 1.0) * (t1 + t2).ln()
        - ln_gamma(r1)
        - ln_gamma(r2);
    Ok(log_val.exp())
}

fn cross_integral(a: &Component, b: &Component) -> Result<f64> {
    match (a, b) {
        (Component::Gaussian(x), Component::Gaussian(y)) => l2_cross_integral_gaussian(x, y),
        (Component::Gamma(x), Component::Gamma(y)) => l2_cross_integral_gamma(x, y),
        _ => Err(Error::FamilyMismatch),
    }
}

/// L2 distance between the mixture densities of `g` and `g2`:
/// `sqrt(w' Soo w - 2 w' Sor v + v' Srr v)` with the three Gram matrices of
/// pairwise density cross-integrals. The quadratic form is clamped at zero
/// against floating-point cancellation.
pub fn l2_distance(g: &MixingDistribution, g2: &MixingDistribution) -> Result<f64> {
    if g.family() != g2.family() {
        return Err(Error::FamilyMismatch);
    }
    if g.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: g2.dim(),
        });
    }
    let quad = |left: &MixingDistribution, right: &MixingDistribution| -> Result<f64> {
        let mut total = 0.0;
        for (i, ci) in left.components().iter().enumerate() {
            for (j, cj) in right.components().iter().enumerate() {
                total += left.weights()[i] * right.weights()[j] * cross_integral(ci, cj)?;
            }
        }
        Ok(total)
    };
    let q_oo = quad(g, g)?;
    let q_or = quad(g, g2)?;
    let q_rr = quad(g2, g2)?;
    Ok((q_oo - 2.0 * q_or + q_rr).max(0.0).sqrt())
}

/// KL divergence from `from` to `to` for Gaussian components, in closed form.
pub fn kl_gaussian(from: &GaussianComponent, to: &GaussianComponent) -> Result<f64> {
    if from.dim() != to.dim() {
        return Err(Error::DimensionMismatch {
            expected: from.dim(),
            got: to.dim(),
        });
    }
    let d = from.dim() as f64;
    let l_to = to.chol_lower();
    // tr(St^{-1} Sf) = ||Lt^{-1} Lf||_F^2
    let w = l_to
        .solve_lower_triangular(from.chol_lower())
        .ok_or(Error::NotPositiveDefinite)?;
    let trace = w.norm_squared();
    let diff = from.mean() - to.mean();
    let z = l_to
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite)?;
    let val = 0.5
        * (trace + z.norm_squared() - d + to.log_det_covariance() - from.log_det_covariance());
    Ok(val.max(0.0))
}

/// Cost between two components under the given kind. KL is defined for
/// Gaussians; squared Euclidean applies to the flattened parameters of either
/// family.
pub fn component_cost(kind: CostKind, from: &Component, to: &Component) -> Result<f64> {
    match kind {
        CostKind::Kl => match (from, to) {
            (Component::Gaussian(a), Component::Gaussian(b)) => kl_gaussian(a, b),
            _ => Err(Error::Metric("KL cost requires Gaussian components".into())),
        },
        CostKind::SqEuclidean => {
            if from.family() != to.family() || from.dim() != to.dim() {
                return Err(Error::FamilyMismatch);
            }
            let mut a = Vec::new();
            from.flatten_into(&mut a);
            let mut b = Vec::new();
            to.flatten_into(&mut b);
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
        }
        CostKind::L2CrossIntegral => cross_integral(from, to),
        CostKind::D1 => Err(Error::Metric(
            "D1 costs are built by the metrics module".into(),
        )),
    }
}

/// The column-relaxed composite transportation divergence: each source atom
/// ships its full mass to the cheapest target component.
pub fn reduced_ctd(
    source: &[(f64, Component)],
    target: &MixingDistribution,
    kind: CostKind,
) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::Aggregation("empty atom list".into()));
    }
    let mass: f64 = source.iter().map(|(w, _)| w).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "atom masses sum to {mass}, expected 1"
        )));
    }
    let mut total = 0.0;
    for (w, comp) in source {
        let mut best = f64::INFINITY;
        for t in target.components() {
            let c = component_cost(kind, comp, t)?;
            if c < best {
                best = c;
            }
        }
        total += w * best;
    }
    Ok(total)
}
