use std::path::{Path, PathBuf};

use regpol_core::basis::BasisSpec;
use regpol_core::data::Schema;
use regpol_core::estimation::{Method, MIN_EIG_WARN};
use regpol_core::format::json_pointer;
use regpol_core::nuisance::NuisanceSpec;
use regpol_core::population::capacity::CapacityGroup;
use regpol_core::population::DiscreteDgp;
use regpol_core::simulation::{EstimatorConfig, SyntheticDgp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub config: T,
    pub base_dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Read a JSON config, apply `key.path=value` overrides, then deserialize
/// with pointer paths on failure.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> CliResult<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.display().to_string(),
        source,
    })?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: String::new(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config = from_value(value)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir })
}

pub fn from_value<T: DeserializeOwned>(value: Value) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| CliError::Config {
        path: json_pointer(e.path()),
        message: e.into_inner().to_string(),
    })
}

/// Set `a.b.0.c` in `root`. The value is parsed as JSON and taken as a
/// plain string when that fails.
pub fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Override(spec.to_string()));
    }
    let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| CliError::Override(spec.to_string()))?;
                items.get_mut(idx).ok_or_else(|| CliError::Override(spec.to_string()))?
            }
            other => {
                if !other.is_object() {
                    *other = Value::Object(Default::default());
                }
                let map = other.as_object_mut().expect("object");
                map.entry(part.to_string()).or_insert(Value::Null)
            }
        };
        if last {
            *cur = new;
            return Ok(());
        }
    }
    Ok(())
}

/// A discrete law given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpSource {
    Path(PathBuf),
    Inline(Value),
}

impl DgpSource {
    pub fn load(&self, base: &Path) -> CliResult<DiscreteDgp> {
        match self {
            DgpSource::Path(p) => {
                let p = if p.is_absolute() { p.clone() } else { base.join(p) };
                Ok(DiscreteDgp::load(p)?)
            }
            DgpSource::Inline(v) => match DiscreteDgp::from_json(&v.to_string()) {
                Err(regpol_core::Error::InvalidDgp { path, message }) => Err(regpol_core::Error::InvalidDgp {
                    path: format!("/dgp{path}"),
                    message,
                }
                .into()),
                other => Ok(other?),
            },
        }
    }
}

/// Column mapping, either as fields or as `y=..., d=..., x=..., w=...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Text(String),
    Fields(Schema),
}

impl SchemaSource {
    pub fn schema(&self) -> CliResult<Schema> {
        match self {
            SchemaSource::Text(s) => Ok(s.parse()?),
            SchemaSource::Fields(s) => Ok(s.clone()),
        }
    }
}

fn default_folds() -> usize {
    5
}

fn default_method() -> Method {
    Method::Debiased
}

fn default_min_eig() -> f64 {
    MIN_EIG_WARN
}

fn default_grid_points() -> usize {
    51
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub data: PathBuf,
    pub schema: SchemaSource,
    #[serde(default = "default_folds")]
    pub k_folds: usize,
    pub nuisance: NuisanceSpec,
    pub basis: BasisSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Capacity `t`; requires a bracket basis.
    #[serde(default)]
    pub capacity: Option<f64>,
    #[serde(default = "default_min_eig")]
    pub min_eig_warn: f64,
    /// Evaluation points per dimension of a spline basis.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A tabular rule: one fraction for every group, or a value per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleValue {
    Uniform(f64),
    PerGroup(std::collections::BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub label: String,
    pub delta: RuleValue,
}

fn default_alphas() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub dgp: DgpSource,
    pub rules: Vec<RuleSpec>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    /// A discrete law. Exactly one of `dgp` and `groups` is given.
    #[serde(default)]
    pub dgp: Option<DgpSource>,
    /// Explicit `(p, a, b)` moments, solved at α = 2 only.
    #[serde(default)]
    pub groups: Option<Vec<CapacityGroup>>,
    pub capacities: Vec<f64>,
    /// Defaults to `[1, 2, 3]` for a law and `[2]` for explicit groups.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: SyntheticDgp,
    pub estimator: EstimatorConfig,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}
