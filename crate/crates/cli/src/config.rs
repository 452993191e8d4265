//! Resolution of flags over config-file values.
//!
//! Every tunable is looked up as: command-line flag, then the key in the
//! config file, then the built-in default. Resolved values are recorded for
//! the run manifest.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<Map<String, Value>>,
}

fn value_to_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Resolver {
    pub fn from_file(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> CliResult<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config file: {e}")))?;
        let mut file = BTreeMap::new();
        for (k, v) in table {
            if v.is_table() || v.is_array() {
                return Err(CliError::usage(format!("config key `{k}` must be a plain value")));
            }
            file.insert(k.replace('-', "_"), value_to_string(&v));
        }
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    /// Flag value, else config value, else `default`.
    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display + Clone + serde::Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file_value(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`get`](Self::get) with no default.
    pub fn get_opt<T>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display + Clone + serde::Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    /// A switch that is on when the flag is given or the config sets it true.
    pub fn switch(&self, key: &str, flag: bool) -> CliResult<bool> {
        let v = flag || self.from_file_value::<bool>(key)?.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }

    fn from_file_value<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.file.get(key) else {
            return Ok(None);
        };
        raw.parse::<T>()
            .map(Some)
            .map_err(|e| CliError::usage(format!("config key `{key}`: {e}")))
    }

    pub fn record<T: serde::Serialize>(&self, key: &str, v: &T) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.used.borrow_mut().insert(key.to_string());
        self.resolved.borrow_mut().insert(key.to_string(), v);
    }

    pub fn resolved(&self) -> Value {
        Value::Object(self.resolved.borrow().clone())
    }

    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.file.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

/// Parses a `snake_case` enum name through serde.
pub fn parse_enum<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> CliResult<T> {
    serde_json::from_value(Value::String(name.to_string()))
        .map_err(|_| CliError::usage(format!("unknown {what} `{name}`")))
}
