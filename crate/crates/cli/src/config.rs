//! Layered experiment configs: preset defaults, then a config file, then
//! command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {msg}")]
    File { path: String, msg: String },
    #[error("unknown preset `{0}`")]
    Preset(String),
    #[error("config: {0}")]
    Invalid(String),
}

/// Read a TOML or JSON object. A JSON report's `config` field is used in
/// place of the whole document, so a report can be re-run from itself.
pub fn read_overrides(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)?;
    let err = |msg: String| ConfigError::File {
        path: path.display().to_string(),
        msg,
    };
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        serde_json::to_value(t).map_err(|e| err(e.to_string()))?
    };
    let value = match value {
        Value::Object(mut m) if m.get("config").is_some_and(Value::is_object) => m.remove("config").unwrap(),
        v => v,
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(err("expected a table of fields".into()).into()),
    }
}

/// Builds a config by overwriting fields of a default value.
pub struct Layered {
    fields: Map<String, Value>,
}

impl Layered {
    pub fn new<T: Serialize>(base: &T) -> anyhow::Result<Self> {
        match serde_json::to_value(base)? {
            Value::Object(fields) => Ok(Self { fields }),
            _ => Err(ConfigError::Invalid("config is not a struct".into()).into()),
        }
    }

    /// Overwrite with every field of `other`; unknown keys are errors.
    pub fn merge(&mut self, other: Map<String, Value>) -> anyhow::Result<()> {
        for (k, v) in other {
            if !self.fields.contains_key(&k) {
                return Err(ConfigError::Invalid(format!("unknown field `{k}`")).into());
            }
            self.fields.insert(k, v);
        }
        Ok(())
    }

    pub fn set<V: Serialize>(&mut self, key: &str, value: Option<V>) -> anyhow::Result<()> {
        if let Some(v) = value {
            if !self.fields.contains_key(key) {
                return Err(ConfigError::Invalid(format!("option does not apply: `{key}`")).into());
            }
            self.fields.insert(key.into(), serde_json::to_value(v)?);
        }
        Ok(())
    }

    pub fn build<T: DeserializeOwned>(self) -> anyhow::Result<T> {
        serde_json::from_value(Value::Object(self.fields)).map_err(|e| ConfigError::Invalid(e.to_string()).into())
    }
}
