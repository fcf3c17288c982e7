//! Flat `key = value` run configuration (TOML without tables).
//!
//! Every key of [`ModelConfig`], [`TrainConfig`] and the run-level settings
//! below can be set; unknown keys are rejected. The effective configuration
//! is echoed back with [`RunConfig::to_text`] / [`RunConfig::to_json`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::seq2seq::{ModelConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}` must be a plain value, not a table or array")]
    Nested { key: String },
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
}

/// Settings that are not part of the network or the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub beam_size: usize,
    /// Quantile of dev-set max token entropy used as the ambiguity threshold.
    pub tau_quantile: f64,
    /// Fixed ambiguity threshold; overrides `tau_quantile`.
    pub tau: Option<f64>,
    pub rounds: usize,
    pub significance_seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            beam_size: 2,
            tau_quantile: 0.9,
            tau: None,
            rounds: 10_000,
            significance_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub run: RunSettings,
}

fn object<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config sections serialize to objects"),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (key, value) in table {
            if matches!(value, toml::Value::Table(_) | toml::Value::Array(_)) {
                return Err(ConfigError::Nested { key });
            }
            let json = serde_json::to_value(&value).map_err(|e| ConfigError::Value {
                key: key.clone(),
                message: e.to_string(),
            })?;
            cfg.set_json(&key, json)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Overrides one key from a command-line `key=value` string; the value is
    /// read as a TOML literal, falling back to a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let json = serde_json::to_value(&value).map_err(|e| ConfigError::Value {
            key: key.into(),
            message: e.to_string(),
        })?;
        self.set_json(key, json)
    }

    fn set_json(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        let bad = |e: serde_json::Error| ConfigError::Value {
            key: key.into(),
            message: e.to_string(),
        };
        let mut model = object(&self.model);
        if model.contains_key(key) {
            model.insert(key.into(), value);
            self.model = serde_json::from_value(Value::Object(model)).map_err(bad)?;
            return Ok(());
        }
        let mut train = object(&self.train);
        if train.contains_key(key) {
            train.insert(key.into(), value);
            self.train = serde_json::from_value(Value::Object(train)).map_err(bad)?;
            return Ok(());
        }
        let mut run = object(&self.run);
        if run.contains_key(key) {
            run.insert(key.into(), value);
            self.run = serde_json::from_value(Value::Object(run)).map_err(bad)?;
            return Ok(());
        }
        Err(ConfigError::UnknownKey(key.into()))
    }

    /// All keys in one flat, sorted map.
    pub fn flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for section in [object(&self.model), object(&self.train), object(&self.run)] {
            out.extend(section);
        }
        out
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.flat().into_iter().collect())
    }

    /// The effective configuration in the input format; unset optional keys
    /// appear as comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.flat() {
            match toml::Value::try_from(&v) {
                Ok(t) if !v.is_null() => out.push_str(&format!("{k} = {t}\n")),
                _ => out.push_str(&format!("# {k} =\n")),
            }
        }
        out
    }
}
