//! Experiment configuration: a flat TOML schema with strict unknown-key
//! rejection, validated into a typed config before any work starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::byzantine::FailureKind;
use crate::error::{Error, Result};
use crate::harness::generate::GeneratorSpec;
use crate::mixture::{
    Component, Family, GammaComponent, GaussianComponent, MixingDistribution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Dfmr,
    Dfmr1,
    Trim,
    Coat,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Dfmr => "dfmr",
            Method::Dfmr1 => "dfmr1",
            Method::Trim => "trim",
            Method::Coat => "coat",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "dfmr" => Ok(Method::Dfmr),
            "dfmr1" => Ok(Method::Dfmr1),
            "trim" => Ok(Method::Trim),
            "coat" => Ok(Method::Coat),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::config("methods", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPolicy {
    Truth,
    Kmeanspp,
}

/// Where the ground-truth mixture comes from.
#[derive(Debug, Clone)]
pub enum TruthSource {
    File(PathBuf),
    Inline(MixingDistribution),
    Generator(GeneratorSpec),
}

/// Raw TOML schema. Every key is flat; unknown keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: String,
    k: usize,
    d: usize,
    m: usize,
    n: usize,
    repetitions: usize,
    master_seed: u64,
    alphas: Vec<f64>,
    failures: Vec<String>,
    methods: Vec<String>,
    rho: Option<f64>,
    eta: Option<f64>,
    init: Option<String>,
    out: Option<String>,
    timings: Option<bool>,
    dump_estimates: Option<bool>,
    em_max_iters: Option<usize>,
    em_tol: Option<f64>,
    em_penalty: Option<f64>,
    mm_tol: Option<f64>,
    mm_max_iters: Option<usize>,
    restarts: Option<usize>,
    truth_file: Option<String>,
    truth_weights: Option<Vec<f64>>,
    truth_means: Option<Vec<f64>>,
    truth_covs: Option<Vec<f64>>,
    truth_shapes: Option<Vec<f64>>,
    truth_scales: Option<Vec<f64>>,
    truth_seed: Option<u64>,
    weight_floor: Option<f64>,
    mean_box: Option<f64>,
    cov_eigenvalues: Option<Vec<f64>>,
}

/// Validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: Family,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub alphas: Vec<f64>,
    pub failures: Vec<FailureKind>,
    pub methods: Vec<Method>,
    pub rho: f64,
    pub eta: f64,
    pub init: InitPolicy,
    pub out: PathBuf,
    pub timings: bool,
    pub dump_estimates: bool,
    pub em: crate::em::EmConfig,
    pub mm_tol: f64,
    pub mm_max_iters: usize,
    pub restarts: usize,
    pub truth: TruthSource,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(|p| p.to_path_buf());
        Self::from_toml_str(&text, base.as_deref())
    }

    /// Parse and validate; `base` resolves relative truth-file paths.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| Error::config("config", e.to_string()))?;
        validate(raw, base)
    }

    /// Resolve the ground-truth mixture. Generated truths are deterministic
    /// in the generator seed.
    pub fn resolve_truth(&self) -> Result<MixingDistribution> {
        let truth = match &self.truth {
            TruthSource::File(path) => crate::mixture::json::read_file(path)?,
            TruthSource::Inline(g) => g.clone(),
            TruthSource::Generator(spec) => crate::harness::generate::generate_mixture(spec)?.mixture,
        };
        if truth.family() != self.family {
            return Err(Error::config("family", "ground truth family differs from `family`"));
        }
        if truth.order() != self.k {
            return Err(Error::config("k", format!(
                "ground truth has {} components, config says {}",
                truth.order(),
                self.k
            )));
        }
        if truth.dim() != self.d {
            return Err(Error::config("d", format!(
                "ground truth has dimension {}, config says {}",
                truth.dim(),
                self.d
            )));
        }
        Ok(truth)
    }
}

fn validate(raw: RawConfig, base: Option<&Path>) -> Result<ExperimentConfig> {
    let family = match raw.family.as_str() {
        "gaussian" => Family::Gaussian,
        "gamma" => Family::Gamma,
        other => return Err(Error::config("family", format!("unknown family `{other}`"))),
    };
    if raw.k == 0 {
        return Err(Error::config("k", "mixture order must be at least 1"));
    }
    if raw.d == 0 {
        return Err(Error::config("d", "dimension must be at least 1"));
    }
    if family == Family::Gamma && raw.d != 1 {
        return Err(Error::config("d", "gamma mixtures are one-dimensional"));
    }
    if raw.m < 2 {
        return Err(Error::config("m", "need at least two machines"));
    }
    if family == Family::Gaussian && raw.n <= raw.d {
        return Err(Error::config("n", "local sample size must exceed the dimension"));
    }
    if raw.n == 0 {
        return Err(Error::config("n", "local sample size must be at least 1"));
    }
    if raw.repetitions == 0 {
        return Err(Error::config("repetitions", "need at least one repetition"));
    }
    if raw.alphas.is_empty() {
        return Err(Error::config("alphas", "need at least one failure fraction"));
    }
    for &a in &raw.alphas {
        if !(0.0..0.5).contains(&a) {
            return Err(Error::config("alphas", format!("fraction {a} outside [0, 0.5)")));
        }
        let count = (a * raw.m as f64).floor() as usize;
        if 2 * count >= raw.m {
            return Err(Error::config(
                "alphas",
                format!("fraction {a} fails {} of {} machines, not a minority", count, raw.m),
            ));
        }
    }
    if raw.failures.is_empty() {
        return Err(Error::config("failures", "need at least one failure kind"));
    }
    let failures: Vec<FailureKind> = raw
        .failures
        .iter()
        .map(|s| match s.as_str() {
            "mean" => Ok(FailureKind::Mean),
            "covariance" => Ok(FailureKind::Covariance),
            "weight" => Ok(FailureKind::Weight),
            "shape" => Ok(FailureKind::Shape),
            "scale" => Ok(FailureKind::Scale),
            other => Err(Error::config("failures", format!("unknown failure kind `{other}`"))),
        })
        .collect::<Result<_>>()?;
    for kind in &failures {
        if !kind.applies_to(family) {
            return Err(Error::config(
                "failures",
                format!("failure kind `{}` does not apply to {} mixtures", kind.as_str(), raw.family),
            ));
        }
    }
    if raw.methods.is_empty() {
        return Err(Error::config("methods", "need at least one method"));
    }
    let methods: Vec<Method> = raw.methods.iter().map(|s| Method::parse(s)).collect::<Result<_>>()?;
    let rho = raw.rho.unwrap_or(1.3);
    if !(rho >= 1.0) {
        return Err(Error::config("rho", format!("inflation factor must be >= 1, got {rho}")));
    }
    let eta = raw.eta.unwrap_or(0.5);
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::config("eta", format!("trim level must lie in (0, 1), got {eta}")));
    }
    let init = match raw.init.as_deref() {
        None | Some("truth") => InitPolicy::Truth,
        Some("kmeanspp") => InitPolicy::Kmeanspp,
        Some(other) => return Err(Error::config("init", format!("unknown init policy `{other}`"))),
    };
    let em = crate::em::EmConfig {
        max_iters: raw.em_max_iters.unwrap_or(1000),
        tol: raw.em_tol.unwrap_or(1e-6),
        penalty: raw.em_penalty,
    };
    if em.max_iters == 0 {
        return Err(Error::config("em_max_iters", "must be at least 1"));
    }
    if !(em.tol > 0.0) {
        return Err(Error::config("em_tol", "must be positive"));
    }
    if let Some(p) = em.penalty {
        if !(p >= 0.0) {
            return Err(Error::config("em_penalty", "must be nonnegative"));
        }
    }
    let mm_tol = raw.mm_tol.unwrap_or(1e-9);
    if !(mm_tol > 0.0) {
        return Err(Error::config("mm_tol", "must be positive"));
    }
    let mm_max_iters = raw.mm_max_iters.unwrap_or(200);
    if mm_max_iters == 0 {
        return Err(Error::config("mm_max_iters", "must be at least 1"));
    }

    let truth = resolve_truth_source(&raw, family, base)?;

    Ok(ExperimentConfig {
        family,
        k: raw.k,
        d: raw.d,
        m: raw.m,
        n: raw.n,
        repetitions: raw.repetitions,
        master_seed: raw.master_seed,
        alphas: raw.alphas,
        failures,
        methods,
        rho,
        eta,
        init,
        out: PathBuf::from(raw.out.unwrap_or_else(|| "results".into())),
        timings: raw.timings.unwrap_or(true),
        dump_estimates: raw.dump_estimates.unwrap_or(false),
        em,
        mm_tol,
        mm_max_iters,
        restarts: raw.restarts.unwrap_or(0),
        truth,
    })
}

fn resolve_truth_source(raw: &RawConfig, family: Family, base: Option<&Path>) -> Result<TruthSource> {
    let has_file = raw.truth_file.is_some();
    let has_inline = raw.truth_weights.is_some();
    let has_generator = raw.truth_seed.is_some();
    match (has_file, has_inline, has_generator) {
        (true, false, false) => {
            let mut path = PathBuf::from(raw.truth_file.as_ref().unwrap());
            if path.is_relative() {
                if let Some(b) = base {
                    path = b.join(path);
                }
            }
            Ok(TruthSource::File(path))
        }
        (false, true, false) => Ok(TruthSource::Inline(inline_truth(raw, family)?)),
        (false, false, true) => {
            if family != Family::Gaussian {
                return Err(Error::config(
                    "truth_seed",
                    "the random generator produces Gaussian mixtures; give gamma truths explicitly",
                ));
            }
            let eigs = raw
                .cov_eigenvalues
                .clone()
                .ok_or_else(|| Error::config("cov_eigenvalues", "required with truth_seed"))?;
            if eigs.len() != 2 || !(eigs[0] > 0.0) || eigs[1] < eigs[0] {
                return Err(Error::config(
                    "cov_eigenvalues",
                    "expected [low, high] with 0 < low <= high",
                ));
            }
            let spec = GeneratorSpec {
                k: raw.k,
                d: raw.d,
                weight_floor: raw.weight_floor.unwrap_or(0.0),
                mean_box: raw
                    .mean_box
                    .ok_or_else(|| Error::config("mean_box", "required with truth_seed"))?,
                eigenvalue_range: (eigs[0], eigs[1]),
                seed: raw.truth_seed.unwrap(),
                overlap_draws: 10_000,
            };
            spec.validate()?;
            Ok(TruthSource::Generator(spec))
        }
        _ => Err(Error::config(
            "truth",
            "give exactly one of truth_file, truth_weights (inline), or truth_seed (generator)",
        )),
    }
}

fn inline_truth(raw: &RawConfig, family: Family) -> Result<MixingDistribution> {
    let weights = raw.truth_weights.clone().unwrap();
    if weights.len() != raw.k {
        return Err(Error::config("truth_weights", format!(
            "expected {} weights, got {}",
            raw.k,
            weights.len()
        )));
    }
    let components: Vec<Component> = match family {
        Family::Gamma => {
            let shapes = raw
                .truth_shapes
                .as_ref()
                .ok_or_else(|| Error::config("truth_shapes", "required for inline gamma truth"))?;
            let scales = raw
                .truth_scales
                .as_ref()
                .ok_or_else(|| Error::config("truth_scales", "required for inline gamma truth"))?;
            if shapes.len() != raw.k || scales.len() != raw.k {
                return Err(Error::config(
                    "truth_shapes",
                    format!("expected {} shapes and scales", raw.k),
                ));
            }
            shapes
                .iter()
                .zip(scales)
                .map(|(&r, &t)| Ok(Component::Gamma(GammaComponent::new(r, t)?)))
                .collect::<Result<_>>()?
        }
        Family::Gaussian => {
            let means = raw
                .truth_means
                .as_ref()
                .ok_or_else(|| Error::config("truth_means", "required for inline gaussian truth"))?;
            let covs = raw
                .truth_covs
                .as_ref()
                .ok_or_else(|| Error::config("truth_covs", "required for inline gaussian truth"))?;
            let (k, d) = (raw.k, raw.d);
            if means.len() != k * d {
                return Err(Error::config("truth_means", format!(
                    "expected {} values (k*d), got {}",
                    k * d,
                    means.len()
                )));
            }
            if covs.len() != k * d * d {
                return Err(Error::config("truth_covs", format!(
                    "expected {} values (k*d*d), got {}",
                    k * d * d,
                    covs.len()
                )));
            }
            (0..k)
                .map(|j| {
                    let mean = nalgebra::DVector::from_column_slice(&means[j * d..(j + 1) * d]);
                    let cov = nalgebra::DMatrix::from_row_slice(
                        d,
                        d,
                        &covs[j * d * d..(j + 1) * d * d],
                    );
                    Ok(Component::Gaussian(GaussianComponent::new(mean, cov)?))
                })
                .collect::<Result<_>>()?
        }
    };
    MixingDistribution::new(weights, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAMMA_CONFIG: &str = r#"
        family = "gamma"
        k = 3
        d = 1
        m = 8
        n = 64
        repetitions = 2
        master_seed = 1
        alphas = [0.0, 0.2]
        failures = ["shape"]
        methods = ["vanilla", "dfmr", "oracle"]
        truth_weights = [0.32, 0.35, 0.33]
        truth_shapes = [1.0, 8.0, 30.0]
        truth_scales = [1.0, 6.0, 10.0]
    "#;

    #[test]
    fn parses_inline_gamma_config() {
        let cfg = ExperimentConfig::from_toml_str(GAMMA_CONFIG, None).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.rho, 1.3);
        assert_eq!(cfg.eta, 0.5);
        let truth = cfg.resolve_truth().unwrap();
        assert_eq!(truth.order(), 3);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{GAMMA_CONFIG}\nbogus_key = 3\n");
        let err = ExperimentConfig::from_toml_str(&text, None).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn rejects_empty_methods() {
        let text = GAMMA_CONFIG.replace(r#"methods = ["vanilla", "dfmr", "oracle"]"#, "methods = []");
        let err = ExperimentConfig::from_toml_str(&text, None).unwrap_err();
        assert!(err.to_string().contains("methods"), "{err}");
    }

    #[test]
    fn rejects_failure_kind_for_wrong_family() {
        let text = GAMMA_CONFIG.replace(r#"failures = ["shape"]"#, r#"failures = ["mean"]"#);
        let err = ExperimentConfig::from_toml_str(&text, None).unwrap_err();
        assert!(err.to_string().contains("failures"), "{err}");
    }

    #[test]
    fn rejects_alpha_at_half() {
        let text = GAMMA_CONFIG.replace("alphas = [0.0, 0.2]", "alphas = [0.5]");
        let err = ExperimentConfig::from_toml_str(&text, None).unwrap_err();
        assert!(err.to_string().contains("alphas"), "{err}");
    }

    #[test]
    fn generator_requires_gaussian() {
        let text = GAMMA_CONFIG
            .replace("truth_weights = [0.32, 0.35, 0.33]", "truth_seed = 4")
            .replace("truth_shapes = [1.0, 8.0, 30.0]", "mean_box = 5.0")
            .replace("truth_scales = [1.0, 6.0, 10.0]", "cov_eigenvalues = [0.5, 2.0]");
        let err = ExperimentConfig::from_toml_str(&text, None).unwrap_err();
        assert!(err.to_string().contains("truth_seed"), "{err}");
    }

    #[test]
    fn infinite_rho_parses() {
        let text = format!("{GAMMA_CONFIG}\nrho = inf\n");
        let cfg = ExperimentConfig::from_toml_str(&text, None).unwrap();
        assert!(cfg.rho.is_infinite());
    }
}
