use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::energy::Problem;
use crate::field::{
    CoefficientSpec, ExponentField, FieldSpec, ForcingField, Grid, ModulusOfContinuity,
    ScalarField,
};
use crate::minimize::MinimizeOptions;

pub const SCHEMA: &str = "fbslab-experiment/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ConfigError {
    fn at(path: &str, message: impl ToString) -> Self {
        Self::Schema {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    Replace,
    Growth,
    Repel,
    Flatness,
    Holder,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    /// Nodes per axis; a single entry applies to every axis.
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid, ConfigError> {
        let nodes = match self.nodes.len() {
            1 => vec![self.nodes[0]; self.dim],
            _ => self.nodes.clone(),
        };
        let lower = self.lower.clone().unwrap_or_else(|| vec![-1.0; self.dim]);
        let upper = self.upper.clone().unwrap_or_else(|| vec![1.0; self.dim]);
        if nodes.len() != self.dim || lower.len() != self.dim || upper.len() != self.dim {
            return Err(ConfigError::at("grid", "axis counts do not match `dim`"));
        }
        Grid::new(&nodes, &lower, &upper).map_err(|e| ConfigError::at("grid", e))
    }
}

fn identity() -> CoefficientSpec {
    CoefficientSpec::Identity
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    #[serde(default = "identity")]
    pub coefficient: CoefficientSpec,
    #[serde(default = "one")]
    pub mu: f64,
    pub forcing: FieldSpec,
    /// Defaults to the maximum of the sampled forcing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cap: Option<f64>,
    pub exponent: FieldSpec,
    /// Defaults to the maximum of the sampled exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    pub phi: FieldSpec,
    /// Modulus of continuity of the exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<ModulusOfContinuity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessConfig {
    pub s_init: f64,
    pub s_max: f64,
    pub rel_tol: f64,
    pub max_probes: usize,
    pub zero_tol: f64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self {
            s_init: 1.0,
            s_max: 1e6,
            rel_tol: 0.02,
            max_probes: 60,
            zero_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Evaluation point; the origin by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Deepest dyadic level; `floor(log2(1 / h))` by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    /// Inclusive `[k_min, k_max]` window of the growth fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_window: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    /// Flatness level; `2^(2 / (gamma(x0) - 2))` by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_target: Option<f64>,
    pub nu0: f64,
    /// Positivity threshold of the free boundary; `10 * tol_node` by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub growth_tolerance: f64,
    /// Radius of the replacement ball around `x0`.
    pub region_radius: f64,
    /// Radius of the Harnack ball around `x0`.
    pub inner_radius: f64,
    /// Largest accepted `C` in `min div(A grad u) >= -C h`.
    pub subharmonic_c_max: f64,
    /// Analytic field fitted by the Hölder estimator instead of the minimiser.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holder_field: Option<FieldSpec>,
    /// Boundary data of the flatness family; the main `phi` when empty.
    pub family: Vec<FieldSpec>,
    pub flatness: FlatnessConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            x0: None,
            k_max: None,
            k_window: None,
            radii: None,
            rho_target: None,
            nu0: 0.25,
            threshold: None,
            growth_tolerance: 0.08,
            region_radius: 0.5,
            inner_radius: 0.25,
            subharmonic_c_max: 10.0,
            holder_field: None,
            family: Vec::new(),
            flatness: FlatnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Pipeline of every member.
    pub kind: ExperimentKind,
    /// One set of `dotted.path -> value` overrides per member.
    pub overrides: Vec<BTreeMap<String, Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub grid: GridConfig,
    pub fields: FieldsConfig,
    #[serde(default)]
    pub solver: MinimizeOptions,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Grid, problem and boundary datum sampled from a configuration.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: Grid,
    pub problem: Problem,
    pub phi: ScalarField,
    pub omega: Option<ModulusOfContinuity>,
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

impl ExperimentConfig {
    /// Parse JSON and report schema violations with their field path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::at("$", e))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(&path, e.into_inner())
        })?;
        if cfg.schema != SCHEMA {
            return Err(ConfigError::at(
                "schema",
                format!("expected `{SCHEMA}`, found `{}`", cfg.schema),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::at("$", e))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(o.clone()))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_path(&mut value, key, v)?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn instance(&self) -> Result<Instance, ConfigError> {
        let grid = self.grid.build()?;
        let f = &self.fields;
        let coefficient = f
            .coefficient
            .sample(&grid, f.mu)
            .map_err(|e| ConfigError::at("fields.coefficient", e))?;
        let forcing_values = f
            .forcing
            .sample_values(&grid)
            .map_err(|e| ConfigError::at("fields.forcing", e))?;
        let cap = f.lambda_cap.unwrap_or_else(|| max_of(&forcing_values));
        let forcing = ForcingField::new(grid, forcing_values, cap)
            .map_err(|e| ConfigError::at("fields.forcing", e))?;
        let exponent_values = f
            .exponent
            .sample_values(&grid)
            .map_err(|e| ConfigError::at("fields.exponent", e))?;
        let gamma_star = f.gamma_star.unwrap_or_else(|| max_of(&exponent_values));
        let exponent = ExponentField::new(grid, exponent_values, gamma_star)
            .map_err(|e| ConfigError::at("fields.exponent", e))?;
        let phi = f.phi.sample(&grid).map_err(|e| ConfigError::at("fields.phi", e))?;
        if let Some(w) = &f.omega {
            w.validate().map_err(|e| ConfigError::at("fields.omega", e))?;
        }
        let problem = Problem::new(coefficient, forcing, exponent)
            .map_err(|e| ConfigError::at("fields", e))?;
        self.solver
            .validate()
            .map_err(|e| ConfigError::at("solver", e))?;
        Ok(Instance {
            grid,
            problem,
            phi,
            omega: f.omega.clone(),
        })
    }

    /// Full validation: schema, sampled fields and kind-specific sections.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inst = self.instance()?;
        let est = &self.estimators;
        if let Some(x0) = &est.x0 {
            if x0.len() != inst.grid.dim() || !inst.grid.contains(x0) {
                return Err(ConfigError::at("estimators.x0", "point is outside the grid"));
            }
        }
        match self.kind {
            ExperimentKind::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| ConfigError::at("sweep", "a sweep needs a `sweep` section"))?;
                if sweep.kind == ExperimentKind::Sweep {
                    return Err(ConfigError::at("sweep.kind", "sweeps cannot nest"));
                }
                for (k, _) in sweep.overrides.iter().enumerate() {
                    self.member(k)?.validate()?;
                }
            }
            ExperimentKind::Growth | ExperimentKind::Repel if inst.omega.is_none() => {
                if self.kind == ExperimentKind::Repel {
                    return Err(ConfigError::at("fields.omega", "the repelling estimate needs a modulus"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Configuration of sweep member `k`.
    pub fn member(&self, k: usize) -> Result<ExperimentConfig, ConfigError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError::at("sweep", "missing"))?;
        let overrides = sweep
            .overrides
            .get(k)
            .ok_or_else(|| ConfigError::at("sweep.overrides", format!("no member {k}")))?;
        let mut value = serde_json::to_value(self).expect("config serialises");
        let obj = value.as_object_mut().expect("config is an object");
        obj.remove("sweep");
        obj.remove("output");
        obj.insert("kind".into(), serde_json::to_value(sweep.kind).expect("kind"));
        obj.insert("name".into(), Value::String(format!("{}/run_{k:03}", self.name)));
        for (key, v) in overrides {
            set_path(&mut value, key, v.clone())
                .map_err(|e| ConfigError::at(&format!("sweep.overrides[{k}]"), e))?;
        }
        Self::from_value(value)
    }
}

/// Set `value[a][b][c] = v` for the dotted path `a.b.c`, creating objects on the way.
pub fn set_path(value: &mut Value, path: &str, v: Value) -> Result<(), ConfigError> {
    let mut cur = value;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(path.into()));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let slot = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).into(), v);
                    return Ok(());
                }
                map.entry(*part).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| ConfigError::at(path, format!("`{part}` is not an index")))?;
                let len = items.len();
                let item = items
                    .get_mut(idx)
                    .ok_or_else(|| ConfigError::at(path, format!("index {idx} beyond {len}")))?;
                if last {
                    *item = v;
                    return Ok(());
                }
                item
            }
            _ => return Err(ConfigError::at(path, format!("`{part}` is not inside an object"))),
        };
        cur = slot;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> &'static str {
        r#"{
            "schema": "fbslab-experiment/1",
            "kind": "solve",
            "name": "zero",
            "grid": {"dim": 2, "nodes": [9]},
            "fields": {
                "forcing": {"kind": "const", "value": 1.0},
                "exponent": {"kind": "const", "value": 1.0},
                "phi": {"kind": "const", "value": 0.0}
            }
        }"#
    }

    #[test]
    fn roundtrip_is_stable() {
        let cfg = ExperimentConfig::from_json(sample()).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_json(), again.to_json());
        cfg.validate().unwrap();
    }

    #[test]
    fn schema_errors_carry_paths() {
        let bad = sample().replacen("\"value\": 1.0}", "\"valu\": 1.0}", 1);
        match ExperimentConfig::from_json(&bad) {
            Err(ConfigError::Schema { path, .. }) => assert!(path.starts_with("fields.forcing"), "{path}"),
            other => panic!("{other:?}"),
        }
        let wrong = sample().replace("fbslab-experiment/1", "v0");
        assert!(matches!(
            ExperimentConfig::from_json(&wrong),
            Err(ConfigError::Schema { path, .. }) if path == "schema"
        ));
    }

    #[test]
    fn overrides_parse_json_or_strings() {
        let mut v: Value = serde_json::from_str(sample()).unwrap();
        set_path(&mut v, "fields.forcing.value", serde_json::json!(2.5)).unwrap();
        set_path(&mut v, "grid.nodes.0", serde_json::json!(17)).unwrap();
        set_path(&mut v, "name", Value::String("x".into())).unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.fields.forcing, FieldSpec::Const { value: 2.5 });
        assert_eq!(cfg.grid.nodes, vec![17]);
        assert_eq!(cfg.name, "x");
    }

    #[test]
    fn bad_exponent_is_a_config_error() {
        let bad = sample().replace(
            "\"exponent\": {\"kind\": \"const\", \"value\": 1.0}",
            "\"exponent\": {\"kind\": \"const\", \"value\": 1.0}, \"gamma_star\": 0.5",
        );
        let cfg = ExperimentConfig::from_json(&bad).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Schema { path, .. }) if path == "fields.exponent"));
    }
}
