//! Subpopulation components: multivariate Gaussian and two-parameter Gamma.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Relative tolerance for the symmetry check on covariance matrices.
const SYMMETRY_RTOL: f64 = 1e-10;

/// Component family marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Gamma,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Gamma => "gamma",
        }
    }
}

/// A multivariate Gaussian component with a lazily cached Cholesky factor.
///
/// The covariance is validated (symmetric, positive definite) at
/// construction. A numerically semidefinite matrix gets one jitter retry of
/// `1e-10 * trace/d` on the diagonal before construction fails; EM covariance
/// updates can brush the PD boundary.
#[derive(Debug)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: OnceLock<DMatrix<f64>>,
}

impl Clone for GaussianComponent {
    fn clone(&self) -> Self {
        let chol = OnceLock::new();
        if let Some(l) = self.chol.get() {
            let _ = chol.set(l.clone());
        }
        GaussianComponent {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
            chol,
        }
    }
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidComponent("empty mean vector".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "gaussian component parameters",
            });
        }
        let scale = covariance.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        // Store the symmetrized matrix so the cached factor reproduces it.
        let mut cov = covariance.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        let component = GaussianComponent {
            mean,
            covariance: cov,
            chol: OnceLock::new(),
        };
        if nalgebra::Cholesky::new(component.covariance.clone()).is_some() {
            return Ok(component);
        }
        // Jitter retry, once.
        let jitter = 1e-10 * component.covariance.trace() / d as f64;
        let mut jittered = component.covariance.clone();
        for i in 0..d {
            jittered[(i, i)] += jitter;
        }
        if nalgebra::Cholesky::new(jittered.clone()).is_some() {
            Ok(GaussianComponent {
                mean: component.mean,
                covariance: jittered,
                chol: OnceLock::new(),
            })
        } else {
            Err(Error::NotPositiveDefinite)
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular Cholesky factor of the covariance, computed on first
    /// use. Safe under concurrent reads.
    pub fn chol_lower(&self) -> &DMatrix<f64> {
        self.chol.get_or_init(|| {
            nalgebra::Cholesky::new(self.covariance.clone())
                .expect("covariance validated at construction")
                .l()
        })
    }

    pub fn log_det_covariance(&self) -> f64 {
        2.0 * self.chol_lower().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol_lower();
        let diff = x - &self.mean;
        let z = l
            .solve_lower_triangular(&diff)
            .expect("triangular factor has positive diagonal");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_covariance() + z.norm_squared())
    }

    /// Log densities of every column of `cols` (a `d x n` matrix).
    pub fn log_density_cols(&self, cols: &DMatrix<f64>) -> DVector<f64> {
        let l = self.chol_lower();
        let mut diff = cols.clone();
        for mut c in diff.column_iter_mut() {
            c -= &self.mean;
        }
        let z = l
            .solve_lower_triangular(&diff)
            .expect("triangular factor has positive diagonal");
        let base = -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_covariance());
        DVector::from_iterator(cols.ncols(), z.column_iter().map(|c| base - 0.5 * c.norm_squared()))
    }
}

/// A two-parameter Gamma component (shape `r`, scale `theta`).
///
/// Shapes are restricted to `r > 0.5`, which keeps every pairwise density
/// cross-integral finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaComponent {
    shape: f64,
    scale: f64,
}

impl GammaComponent {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !shape.is_finite() || !scale.is_finite() {
            return Err(Error::NonFinite {
                context: "gamma component parameters",
            });
        }
        if shape <= 0.5 {
            return Err(Error::InvalidComponent(format!(
                "gamma shape must exceed 0.5, got {shape}"
            )));
        }
        if scale <= 0.0 {
            return Err(Error::InvalidComponent(format!(
                "gamma scale must be positive, got {scale}"
            )));
        }
        Ok(GammaComponent { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * x.ln() - x / self.scale
            - self.shape * self.scale.ln()
            - ln_gamma(self.shape)
    }
}

/// Closed enumeration of supported component families.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Gaussian(GaussianComponent),
    Gamma(GammaComponent),
}

impl Component {
    pub fn family(&self) -> Family {
        match self {
            Component::Gaussian(_) => Family::Gaussian,
            Component::Gamma(_) => Family::Gamma,
        }
    }

    /// Dimension of the observation space (1 for Gamma).
    pub fn dim(&self) -> usize {
        match self {
            Component::Gaussian(g) => g.dim(),
            Component::Gamma(_) => 1,
        }
    }

    /// Length of the flattened parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            Component::Gaussian(g) => {
                let d = g.dim();
                d + d * (d + 1) / 2
            }
            Component::Gamma(_) => 2,
        }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        match self {
            Component::Gaussian(g) => g.log_density(x),
            Component::Gamma(g) => g.log_density(x[0]),
        }
    }

    /// Log densities of every column of a `d x n` observation matrix.
    pub fn log_density_cols(&self, cols: &DMatrix<f64>) -> DVector<f64> {
        match self {
            Component::Gaussian(g) => g.log_density_cols(cols),
            Component::Gamma(g) => {
                DVector::from_iterator(cols.ncols(), cols.row(0).iter().map(|&x| g.log_density(x)))
            }
        }
    }

    /// Flatten into `out`: mean then the lower triangle of the covariance
    /// (row-major) for Gaussians; `(shape, scale)` for Gammas.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Component::Gaussian(g) => {
                out.extend(g.mean().iter());
                let cov = g.covariance();
                for i in 0..g.dim() {
                    for j in 0..=i {
                        out.push(cov[(i, j)]);
                    }
                }
            }
            Component::Gamma(g) => {
                out.push(g.shape());
                out.push(g.scale());
            }
        }
    }

    /// Rebuild a component of the same family/dimension from a flattened
    /// parameter slice.
    pub fn from_flat(family: Family, d: usize, flat: &[f64]) -> Result<Component> {
        match family {
            Family::Gaussian => {
                let expected = d + d * (d + 1) / 2;
                if flat.len() != expected {
                    return Err(Error::DimensionMismatch {
                        expected,
                        got: flat.len(),
                    });
                }
                let mean = DVector::from_column_slice(&flat[..d]);
                let mut cov = DMatrix::zeros(d, d);
                let mut idx = d;
                for i in 0..d {
                    for j in 0..=i {
                        cov[(i, j)] = flat[idx];
                        cov[(j, i)] = flat[idx];
                        idx += 1;
                    }
                }
                Ok(Component::Gaussian(GaussianComponent::new(mean, cov)?))
            }
            Family::Gamma => {
                if flat.len() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        got: flat.len(),
                    });
                }
                Ok(Component::Gamma(GammaComponent::new(flat[0], flat[1])?))
            }
        }
    }
}
