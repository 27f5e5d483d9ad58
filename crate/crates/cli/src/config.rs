//! Config document and `--set` overrides.
//!
//! A config is one JSON object with optional sections `system`, `sensors`,
//! `scenario`, `iterate`, `run` and `allocations`. Missing sections take their
//! defaults. Overrides are dotted paths into the fully defaulted document, so
//! only keys that exist there can be set.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use wpcs::iterate::IterateConfig;
use wpcs::sim::{Axis, ScenarioSpec};
use wpcs::{Allocation, SensorProfile, SystemConfig, WpcsError};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub axis: Axis,
    /// Sweep points; empty means the axis default.
    pub values: Vec<f64>,
    pub trials: usize,
    /// Instances in the verify battery.
    pub instances: usize,
    pub tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            axis: Axis::P0,
            values: Vec::new(),
            trials: 200,
            instances: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Overrides the system fields of `scenario` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    /// Explicit sensors; replaces random sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<SensorProfile>>,
    pub scenario: ScenarioSpec,
    pub iterate: IterateConfig,
    pub run: RunSection,
    /// A given solution to audit instead of solving (verify only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocations: Option<Vec<Allocation>>,
}

impl Config {
    /// Scenario with the `system` section, if any, folded in.
    pub fn scenario(&self) -> ScenarioSpec {
        let mut spec = self.scenario.clone();
        if let Some(sys) = &self.system {
            spec.p0 = sys.p0;
            spec.t0 = sys.t0;
            spec.t = sys.t;
            spec.bandwidth = sys.bandwidth;
            spec.noise = sys.noise;
            spec.eta = sys.eta;
            spec.c = sys.price;
        }
        spec
    }

    pub fn system(&self) -> SystemConfig {
        self.system.unwrap_or_else(|| self.scenario.system())
    }

    pub fn validate(&self) -> wpcs::Result<()> {
        self.scenario.validate()?;
        self.system().validate()?;
        self.iterate.validate()?;
        if let Some(sensors) = &self.sensors {
            if sensors.is_empty() {
                return Err(WpcsError::Validation {
                    field: "sensors".into(),
                    detail: "empty list".into(),
                });
            }
            for (i, s) in sensors.iter().enumerate() {
                s.validate(i)?;
            }
        }
        if let Some(allocs) = &self.allocations {
            let n = self.sensors.as_ref().map_or(0, Vec::len);
            if allocs.len() != n {
                return Err(WpcsError::Validation {
                    field: "allocations".into(),
                    detail: format!("{} entries for {n} sensors", allocs.len()),
                });
            }
        }
        if self.run.tol.is_nan() || self.run.tol <= 0.0 {
            return Err(WpcsError::Validation {
                field: "run.tol".into(),
                detail: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

/// Reads `path` (or the empty document), applies overrides and deserializes.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
    let user: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !user.is_object() {
        return Err(CliError::Parse("config must be a JSON object".into()));
    }
    let mut doc = defaulted(user)?;
    let (system_keys, other_keys): (Vec<_>, Vec<_>) = overrides
        .iter()
        .map(|s| split_override(s))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .partition(|(k, _)| k == "system" || k.starts_with("system."));
    for (key, value) in &other_keys {
        set_path(&mut doc, key, value.clone())?;
    }
    if !system_keys.is_empty() && doc.get("system").is_none() {
        // materialize the system from the (overridden) scenario
        let cfg: Config = from_doc(doc.clone())?;
        let sys = serde_json::to_value(cfg.scenario.system()).expect("serializable");
        doc.as_object_mut()
            .expect("object")
            .insert("system".into(), sys);
    }
    for (key, value) in &system_keys {
        set_path(&mut doc, key, value.clone())?;
    }
    from_doc(doc)
}

fn from_doc(doc: Value) -> Result<Config, CliError> {
    serde_json::from_value(doc).map_err(|e| CliError::Parse(format!("config: {e}")))
}

/// The user document with every default filled in, so override paths can be
/// checked against it. Keys the typed form does not know are rejected.
fn defaulted(user: Value) -> Result<Value, CliError> {
    let cfg: Config = from_doc(user.clone())?;
    let full = serde_json::to_value(&cfg).expect("serializable");
    check_known(&full, &user, "")?;
    Ok(full)
}

fn check_known(full: &Value, user: &Value, prefix: &str) -> Result<(), CliError> {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match (full, user) {
        (Value::Object(f), Value::Object(u)) => {
            for (k, v) in u {
                let slot = f.get(k).ok_or_else(|| {
                    CliError::Validation(format!("unknown config key '{}'", join(k)))
                })?;
                check_known(slot, v, &join(k))?;
            }
        }
        (Value::Array(f), Value::Array(u)) => {
            for (i, (a, b)) in f.iter().zip(u).enumerate() {
                check_known(a, b, &join(&i.to_string()))?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn split_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("--set expects key=value, got '{raw}'")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Parse(format!("--set with empty key: '{raw}'")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

/// Replaces the value at dotted `path`; every segment must already exist.
fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let unknown = || CliError::Validation(format!("unknown config key '{path}'"));
    let mut node = doc;
    for seg in path.split('.') {
        node = match node {
            Value::Object(m) => m.get_mut(seg).ok_or_else(unknown)?,
            Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| unknown())?;
                a.get_mut(i).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_without_file() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.system(), ScenarioSpec::default().system());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = load(
            None,
            &[
                "scenario.n_sensors=3".into(),
                "iterate.init_ratio=1.2".into(),
                "run.axis=\"t\"".into(),
                "run.axis=t".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.scenario.n_sensors, 3);
        assert_eq!(cfg.iterate.init_ratio, 1.2);
        assert_eq!(cfg.run.axis, Axis::T);
    }

    #[test]
    fn system_override_starts_from_scenario() {
        let cfg = load(None, &["scenario.T=2.0".into(), "system.P0=0.5".into()]).unwrap();
        let sys = cfg.system();
        assert_eq!(sys.p0, 0.5);
        assert_eq!(sys.t, 2.0);
        assert_eq!(cfg.scenario().p0, 0.5);
    }

    #[test]
    fn unknown_key_is_rejected() {
        match load(None, &["scenario.nonsense=1".into()]) {
            Err(CliError::Validation(msg)) => assert!(msg.contains("scenario.nonsense")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load(None, &["novalue".into()]),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn unknown_section_field_is_rejected() {
        let dir = std::env::temp_dir().join(format!("wpcs-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"scenario": {"n_sensor": 3}}"#).unwrap();
        match load(Some(&path), &[]) {
            Err(CliError::Validation(msg)) => assert!(msg.contains("scenario.n_sensor")),
            other => panic!("{other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn dump_then_load_is_identity() {
        let cfg = load(None, &["scenario.seed=9".into(), "run.trials=7".into()]).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
