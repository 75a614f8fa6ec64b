//! Run configuration: one JSON document, dotted-path overrides, content
//! hashes for artifact guards, and seed splitting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::SyntheticSource;
use crate::prior::PriorSpec;
use crate::toeplitz::DEFAULT_DENSE_CAP;
use crate::wave::{GridSpec, ModelSpec, ObservationSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub artifact_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            artifact_dir: PathBuf::from("artifacts"),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn default_noise_level() -> f64 {
    0.04
}

fn default_credible_level() -> f64 {
    0.95
}

fn default_dense_cap() -> u64 {
    DEFAULT_DENSE_CAP as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    /// `None` selects the reference source scaled to the grid.
    #[serde(default)]
    pub source: Option<SyntheticSource>,
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    #[serde(default = "default_credible_level")]
    pub credible_level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    /// Largest dense matrix, in entries, any command may form.
    #[serde(default = "default_dense_cap")]
    pub dense_cap: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// The default desk-scale vertical slice.
    pub fn desk() -> Self {
        Self {
            model: ModelSpec::default(),
            prior: PriorSpec::default(),
            source: None,
            noise_level: default_noise_level(),
            credible_level: default_credible_level(),
            seed: 0,
            paths: Paths::default(),
            dense_cap: default_dense_cap(),
        }
    }

    /// A 17 × 5 slice with 680 space-time parameters, small enough for
    /// every dense oracle.
    pub fn tiny() -> Self {
        let model = ModelSpec {
            grid: GridSpec {
                seafloor_dim: 1,
                nx: 17,
                ny: 1,
                nz: 5,
                dx: 250.0,
                dy: 1.0,
                dz: 250.0,
            },
            observation: ObservationSpec {
                sensor_indices: vec![2, 6, 10, 14],
                qoi_indices: vec![8, 12, 16],
                data_dt: 0.5,
                n_time: 40,
                qoi_subsample: 4,
            },
            ..ModelSpec::default()
        };
        Self {
            model,
            prior: PriorSpec {
                alpha2: 2.08e4,
                ..PriorSpec::default()
            },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected desk or tiny)"
            ))),
        }
    }

    /// Parses JSON, applies `key=value` overrides and validates.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let parsed: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
        let mut value = serde_json::to_value(parsed).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => serde_json::to_string(&Self::desk()).expect("config serializes"),
        };
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prior.validate()?;
        self.resolved_source().validate()?;
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!(
                "noise_level must be nonnegative, got {}",
                self.noise_level
            )));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(Error::Config(format!(
                "credible_level must lie in (0, 1), got {}",
                self.credible_level
            )));
        }
        Ok(())
    }

    pub fn resolved_source(&self) -> SyntheticSource {
        self.source
            .clone()
            .unwrap_or_else(|| SyntheticSource::scaled_to(&self.model.grid))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Identifies the inputs of the offline map assembly.
    pub fn phase1_hash(&self) -> String {
        hash_json(&serde_json::json!({ "model": self.model, "prior": self.prior }))
    }

    /// Identifies the inputs of the data-space factorization.
    pub fn phase2_hash(&self) -> String {
        hash_json(&serde_json::json!({
            "phase1": self.phase1_hash(),
            "source": self.resolved_source(),
            "noise_level": self.noise_level,
        }))
    }

    pub fn sub_seed(&self, stream: &str) -> u64 {
        split_seed(self.seed, stream)
    }
}

/// SHA-256 of the compact JSON serialization with object keys sorted.
pub fn hash_json(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Derives an independent seed for a named stream: the first eight bytes
/// (little endian) of `SHA-256(seed_le ‖ stream)`.
pub fn split_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Sets `a.b.c=value`. The value is parsed as JSON when possible and kept as
/// a string otherwise; numeric segments index into arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    if path.is_empty() {
        return Err(Error::Config("override has an empty key".into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                let child = map.entry(seg.to_string()).or_insert(Value::Null);
                if child.is_null() {
                    *child = Value::Object(Default::default());
                }
                child
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::Config(format!("`{seg}` in `{path}` must index an array"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("index {idx} in `{path}` is out of range 0..{len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "`{path}` descends into a non-object value"
                )))
            }
        };
    }
    unreachable!("the loop returns on the last segment")
}
