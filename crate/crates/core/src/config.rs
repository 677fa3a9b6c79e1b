//! Run configuration shared by the library pipeline and the CLI.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::alignment::AlignmentMode;
use crate::clustering::LeftoverPolicy;
use crate::error::{Error, Result};
use crate::objective::{auto_lambda, AdamConfig, LambdaSchedule, LossConfig};
use crate::style::StyleOptions;
use crate::synthesis::{InversionOptions, Profile};

/// How each cluster is turned into one released image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ksalsa,
    Centroid,
    Pixel,
    Pca,
}

impl Method {
    /// Methods whose output is `G(w)` for some latent code `w`.
    pub fn is_latent(self) -> bool {
        matches!(self, Method::Ksalsa | Method::Centroid)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ksalsa" => Ok(Method::Ksalsa),
            "centroid" => Ok(Method::Centroid),
            "pixel" => Ok(Method::Pixel),
            "pca" => Ok(Method::Pca),
            other => Err(Error::arg(format!(
                "unknown method {other:?} (expected ksalsa, centroid, pixel or pca)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ksalsa => "ksalsa",
            Method::Centroid => "centroid",
            Method::Pixel => "pixel",
            Method::Pca => "pca",
        })
    }
}

/// `"auto"` (look up by k) or an explicit value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaSetting {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for LambdaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(LambdaSetting::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::arg(format!("lambda must be \"auto\" or a number, got {s:?}")))?;
        Ok(LambdaSetting::Value(v))
    }
}

impl Serialize for LambdaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaSetting::Auto => s.serialize_str("auto"),
            LambdaSetting::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = LambdaSetting;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<LambdaSetting, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<LambdaSetting, E> {
                Ok(LambdaSetting::Value(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<LambdaSetting, E> {
                Ok(LambdaSetting::Value(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<LambdaSetting, E> {
                Ok(LambdaSetting::Value(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub count: usize,
    pub scale: f64,
}

/// Everything that determines a release. Paths and thread counts are not part
/// of it, so the hash only changes when the output would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub k: usize,
    pub lambda: LambdaSetting,
    pub lambda_schedule: LambdaSchedule,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub grid: usize,
    pub normalize_gram: bool,
    pub alignment: AlignmentMode,
    pub method: Method,
    /// Seeds the toy generator, feature extractor and content encoder.
    pub seed: u64,
    pub policy: LeftoverPolicy,
    pub augmentation: Option<Augmentation>,
    /// PCA components for the `pca` method; `None` picks `min(n - 1, 8)`.
    pub pca_components: Option<usize>,
    pub adam: AdamConfig,
    pub inversion: InversionOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Toy16,
            k: 5,
            lambda: LambdaSetting::Auto,
            lambda_schedule: LambdaSchedule::Aptos,
            iterations: 50,
            grid: 4,
            normalize_gram: false,
            alignment: AlignmentMode::CosineArgmax,
            method: Method::Ksalsa,
            seed: 0,
            policy: LeftoverPolicy::Error,
            augmentation: None,
            pca_components: None,
            adam: AdamConfig::default(),
            inversion: InversionOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn resolved_lambda(&self) -> f64 {
        match self.lambda {
            LambdaSetting::Auto => auto_lambda(self.lambda_schedule, self.k),
            LambdaSetting::Value(v) => v,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.resolved_lambda(),
            style: StyleOptions {
                grid: self.grid,
                normalize: self.normalize_gram,
            },
            alignment: self.alignment,
            iterations: self.iterations,
            adam: self.adam,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::arg("k must be >= 1"));
        }
        if let Some(aug) = &self.augmentation {
            if aug.count == 0 || !(aug.scale >= 0.0) {
                return Err(Error::arg(format!("invalid augmentation {aug:?}")));
            }
            if !self.method.is_latent() {
                return Err(Error::arg(format!(
                    "augmentation needs a latent method (ksalsa or centroid), got {}",
                    self.method
                )));
            }
        }
        self.loss_config().validate()
    }

    /// Canonical JSON: struct field order, shortest round-trip floats.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
