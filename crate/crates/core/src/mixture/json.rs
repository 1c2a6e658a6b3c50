//! JSON serialization of mixing distributions.
//!
//! Schema: `{family, k, d, weights[], components[]}` where a Gaussian
//! component is `{mean[], cov[]}` with the covariance stored row-major, and a
//! Gamma component is `{shape, scale}`. Doubles are written as the hex
//! encoding of their IEEE-754 bits (`"0x3fe0000000000000"`), which makes the
//! round trip lossless; plain JSON numbers are accepted on input for
//! hand-written files.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mixture::component::{Component, Family, GammaComponent, GaussianComponent};
use crate::mixture::mixing::MixingDistribution;

/// An f64 carried as an exact hex bit pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexF64(pub f64);

impl Serialize for HexF64 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("0x{:016x}", self.0.to_bits()))
    }
}

impl<'de> Deserialize<'de> for HexF64 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(HexF64(v)),
            Raw::Text(s) => {
                let stripped = s
                    .strip_prefix("0x")
                    .or_else(|| s.strip_prefix("0X"))
                    .ok_or_else(|| D::Error::custom(format!("expected 0x-prefixed hex f64, got `{s}`")))?;
                let bits = u64::from_str_radix(stripped, 16)
                    .map_err(|e| D::Error::custom(format!("bad hex f64 `{s}`: {e}")))?;
                Ok(HexF64(f64::from_bits(bits)))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ComponentDoc {
    Gaussian { mean: Vec<HexF64>, cov: Vec<HexF64> },
    Gamma { shape: HexF64, scale: HexF64 },
}

#[derive(Serialize, Deserialize)]
struct MixtureDoc {
    family: String,
    k: usize,
    d: usize,
    weights: Vec<HexF64>,
    components: Vec<ComponentDoc>,
}

pub fn to_json(g: &MixingDistribution) -> String {
    let components = g
        .components()
        .iter()
        .map(|c| match c {
            Component::Gaussian(gc) => ComponentDoc::Gaussian {
                mean: gc.mean().iter().map(|&v| HexF64(v)).collect(),
                cov: {
                    let m = gc.covariance();
                    let d = gc.dim();
                    let mut out = Vec::with_capacity(d * d);
                    for i in 0..d {
                        for j in 0..d {
                            out.push(HexF64(m[(i, j)]));
                        }
                    }
                    out
                },
            },
            Component::Gamma(gc) => ComponentDoc::Gamma {
                shape: HexF64(gc.shape()),
                scale: HexF64(gc.scale()),
            },
        })
        .collect();
    let doc = MixtureDoc {
        family: g.family().as_str().to_string(),
        k: g.order(),
        d: g.dim(),
        weights: g.weights().iter().map(|&w| HexF64(w)).collect(),
        components,
    };
    serde_json::to_string_pretty(&doc).expect("mixture document always serializes")
}

pub fn from_json(text: &str) -> Result<MixingDistribution> {
    let doc: MixtureDoc =
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    let family = match doc.family.as_str() {
        "gaussian" => Family::Gaussian,
        "gamma" => Family::Gamma,
        other => return Err(Error::Serialization(format!("unknown family `{other}`"))),
    };
    if doc.components.len() != doc.k || doc.weights.len() != doc.k {
        return Err(Error::Serialization(format!(
            "k = {} but {} components / {} weights",
            doc.k,
            doc.components.len(),
            doc.weights.len()
        )));
    }
    let mut components = Vec::with_capacity(doc.k);
    for (i, c) in doc.components.iter().enumerate() {
        match (family, c) {
            (Family::Gaussian, ComponentDoc::Gaussian { mean, cov }) => {
                if mean.len() != doc.d || cov.len() != doc.d * doc.d {
                    return Err(Error::Serialization(format!(
                        "component {i}: expected mean of length {} and cov of length {}",
                        doc.d,
                        doc.d * doc.d
                    )));
                }
                let mu = DVector::from_iterator(doc.d, mean.iter().map(|h| h.0));
                let sigma =
                    DMatrix::from_row_iterator(doc.d, doc.d, cov.iter().map(|h| h.0));
                components.push(Component::Gaussian(GaussianComponent::new(mu, sigma)?));
            }
            (Family::Gamma, ComponentDoc::Gamma { shape, scale }) => {
                components.push(Component::Gamma(GammaComponent::new(shape.0, scale.0)?));
            }
            _ => {
                return Err(Error::Serialization(format!(
                    "component {i} does not match family `{}`",
                    doc.family
                )))
            }
        }
    }
    MixingDistribution::new(doc.weights.iter().map(|h| h.0).collect(), components)
}

pub fn write_file(g: &MixingDistribution, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_json(g) + "\n")?;
    Ok(())
}

pub fn read_file(path: &std::path::Path) -> Result<MixingDistribution> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact_gaussian() {
        let g = MixingDistribution::new(
            vec![0.1 + 0.2, 0.7], // deliberately non-representable weight
            vec![
                Component::Gaussian(
                    GaussianComponent::new(
                        DVector::from_column_slice(&[0.1, -2.7]),
                        DMatrix::from_row_slice(2, 2, &[1.37, 0.21, 0.21, 0.89]),
                    )
                    .unwrap(),
                ),
                Component::Gaussian(
                    GaussianComponent::new(
                        DVector::from_column_slice(&[3.0, 4.0]),
                        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap();
        let back = from_json(&to_json(&g)).unwrap();
        assert_eq!(back.weights(), g.weights());
        assert_eq!(back.components(), g.components());
    }

    #[test]
    fn roundtrip_is_bit_exact_gamma() {
        let g = MixingDistribution::new(
            vec![0.32, 0.35, 0.33],
            vec![
                Component::Gamma(GammaComponent::new(1.0, 1.0).unwrap()),
                Component::Gamma(GammaComponent::new(8.0, 6.0).unwrap()),
                Component::Gamma(GammaComponent::new(30.0, 10.0).unwrap()),
            ],
        )
        .unwrap();
        let back = from_json(&to_json(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn accepts_plain_numbers() {
        let text = r#"{
            "family": "gamma", "k": 1, "d": 1,
            "weights": [1.0],
            "components": [{"shape": 2.0, "scale": 3.0}]
        }"#;
        let g = from_json(text).unwrap();
        assert_eq!(g.order(), 1);
    }

    #[test]
    fn rejects_family_component_mismatch() {
        let text = r#"{
            "family": "gaussian", "k": 1, "d": 1,
            "weights": [1.0],
            "components": [{"shape": 2.0, "scale": 3.0}]
        }"#;
        assert!(from_json(text).is_err());
    }
}
