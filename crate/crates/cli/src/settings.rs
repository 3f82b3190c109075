//! Flag/config merging, error classes and the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

/// A failed run. The variant picks the exit code.
#[derive(Debug)]
pub enum Fail {
    /// Bad flags, config or input files: exit 1.
    Validation(String),
    /// Failure while computing or writing results: exit 2.
    Runtime(String),
}

impl Fail {
    pub fn exit_code(&self) -> i32 {
        match self {
            Fail::Validation(_) => 1,
            Fail::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fail::Validation(m) => write!(f, "invalid input: {m}"),
            Fail::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<cct_core::Error> for Fail {
    fn from(e: cct_core::Error) -> Self {
        use cct_core::Error as E;
        match e {
            E::Io(_) | E::NoConvergence(_) => Fail::Runtime(e.to_string()),
            other => Fail::Validation(other.to_string()),
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Validation(msg.into())
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

/// Read a config file: either `key = value` lines (`#` comments) or the
/// manifest JSON of an earlier run, whose echoed `config` is reused.
pub fn load_config(path: &Path, command: &str) -> Result<BTreeMap<String, String>, Fail> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut kv = BTreeMap::new();
    if text.trim_start().starts_with('{') {
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("{}: not a manifest: {e}", path.display())))?;
        let config = json
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| invalid(format!("{}: manifest has no `config` object", path.display())))?;
        for (k, v) in config {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            kv.insert(normalize_key(k), v);
        }
    } else {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                invalid(format!(
                    "{} line {}: expected `key = value`, got `{line}`",
                    path.display(),
                    n + 1
                ))
            })?;
            kv.insert(normalize_key(k), v.trim().to_string());
        }
    }
    if let Some(c) = kv.remove("command") {
        if c != command {
            return Err(invalid(format!("config is for `{c}`, not `{command}`")));
        }
    }
    Ok(kv)
}

/// Flag values from a clap struct; unset (`None`) flags are skipped.
pub fn flag_pairs<T: Serialize>(args: &T) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        for (k, v) in map {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => {
                    out.insert(k, s);
                }
                other => {
                    out.insert(k, other.to_string());
                }
            }
        }
    }
    out
}

/// Config values overlaid with flags. Every value read is recorded in the
/// echo, so the manifest reproduces the run exactly.
#[derive(Debug)]
pub struct Settings {
    values: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl Settings {
    pub fn new(config: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut values = config;
        values.extend(flags);
        Self {
            values,
            echo: BTreeMap::new(),
            consumed: BTreeSet::new(),
        }
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, Fail>
    where
        T::Err: fmt::Display,
    {
        raw.trim()
            .parse::<T>()
            .map_err(|e| invalid(format!("`{key}`: cannot parse `{raw}`: {e}")))
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Fail>
    where
        T::Err: fmt::Display,
    {
        self.consumed.insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => {
                let v = Self::parse(key, raw)?;
                self.echo.insert(key.to_string(), raw.trim().to_string());
                Ok(Some(v))
            }
        }
    }

    pub fn req<T: FromStr>(&mut self, key: &str) -> Result<T, Fail>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| invalid(format!("`--{}` is required", key.replace('_', "-"))))
    }

    /// Value or `default`; the default is echoed too.
    pub fn get<T: FromStr + fmt::Display>(&mut self, key: &str, default: T) -> Result<T, Fail>
    where
        T::Err: fmt::Display,
    {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.echo.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Comma-separated list, or `default`.
    pub fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, Fail>
    where
        T::Err: fmt::Display,
    {
        self.consumed.insert(key.to_string());
        let raw = self
            .values
            .get(key)
            .map(String::as_str)
            .unwrap_or(default)
            .to_string();
        let out = raw
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Self::parse(key, s))
            .collect::<Result<Vec<T>, _>>()?;
        if out.is_empty() {
            return Err(invalid(format!("`{key}` is empty")));
        }
        self.echo.insert(
            key.to_string(),
            raw.split(',').map(str::trim).collect::<Vec<_>>().join(","),
        );
        Ok(out)
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }

    /// Keys supplied but never read by the command.
    pub fn unused(&self) -> Vec<String> {
        self.values
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: &'a BTreeMap<String, String>,
    pub workers: usize,
    pub wall_time_seconds: f64,
    pub artifact: Option<String>,
    pub warnings: &'a [String],
}
