use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Version of the manifest layout; bumped on any incompatible change.
pub const MANIFEST_SCHEMA: &str = "hjlab-manifest/1";

pub const VERSION_TAG: &str = concat!("hjlab ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// A produced file; `path` is relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub path: PathBuf,
}

/// A float that survives JSON: non-finite values are written as the
/// strings `"inf"`, `"-inf"` and `"nan"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(x) => Ok(Num(x)),
            Raw::S(s) => match s.as_str() {
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                "nan" => Ok(Num(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("not a number: `{other}`"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Num,
    pub tolerance: Num,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Passed,
    /// The pipeline finished but a check failed.
    Failed,
    /// A stage returned an error; results up to it are kept.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub seeds: BTreeMap<String, u64>,
    pub timings: Vec<Timing>,
    pub artifacts: Vec<Artifact>,
    pub diagnostics: BTreeMap<String, Num>,
    pub checks: Vec<Check>,
    pub status: RunStatus,
    pub failure: Option<Failure>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(config: &ExperimentConfig, output_dir: &Path) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            version: VERSION_TAG.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            output_dir: output_dir.to_path_buf(),
            seeds: BTreeMap::new(),
            timings: Vec::new(),
            artifacts: Vec::new(),
            diagnostics: BTreeMap::new(),
            checks: Vec::new(),
            status: RunStatus::Passed,
            failure: None,
        }
    }

    pub fn path(&self) -> PathBuf {
        self.output_dir.join(MANIFEST_FILE)
    }

    pub fn artifact_path(&self, name: &str) -> Option<PathBuf> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| self.output_dir.join(&a.path))
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(self.path(), text + "\n")?;
        Ok(())
    }

    /// Read a manifest; the output directory is taken to be the one that
    /// holds the file, so a moved run stays readable.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Format(format!("unsupported manifest schema `{}`", m.schema)));
        }
        m.output_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }
}
