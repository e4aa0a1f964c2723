//! Flat key-value experiment configs.
//!
//! The format is line-based: `[section]` headers group `key = value` pairs,
//! `#` starts a comment, lists are comma-separated. Keys are addressed as
//! `section.key`, and a pair may also be written fully qualified outside any
//! section (`run.seed = 1`). Every key must be consumed by the study that
//! runs the config; leftovers are reported as unknown fields so typos fail
//! loudly instead of silently falling back to defaults.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::CliError;

/// Key under which the mandatory seed lives.
pub const SEED_KEY: &str = "run.seed";

/// A parsed config: `section.key` to raw string values, with consumption
/// tracking for unknown-key detection.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn valid_key(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(valid_name)
}

impl Config {
    /// Parses config text. Duplicate keys and malformed lines are errors.
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CliError::config(format!("line {lineno}"), "unterminated section header")
                })?;
                if !valid_name(name) {
                    return Err(CliError::config(
                        format!("line {lineno}"),
                        format!("invalid section name '{name}'"),
                    ));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(
                    format!("line {lineno}"),
                    "expected 'key = value' or '[section]'",
                )
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(CliError::config(
                    format!("line {lineno}"),
                    format!("invalid key name '{key}'"),
                ));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if values
                .insert(full.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(CliError::config(full, "duplicate key"));
            }
        }
        Ok(Config {
            values,
            consumed: BTreeSet::new(),
        })
    }

    /// Reads and parses a config file.
    pub fn load(path: &std::path::Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Config::parse(&text)
    }

    fn raw(&mut self, key: &str) -> Option<&str> {
        if self.values.contains_key(key) {
            self.consumed.insert(key.to_string());
        }
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_as<T: std::str::FromStr>(key: &str, raw: &str, kind: &str) -> Result<T, CliError> {
        raw.parse()
            .map_err(|_| CliError::config(key, format!("expected {kind}, found '{raw}'")))
    }

    /// Required string value.
    pub fn string(&mut self, key: &str) -> Result<String, CliError> {
        self.raw(key)
            .map(str::to_string)
            .ok_or_else(|| CliError::config(key, "missing required key"))
    }

    /// Optional string value with a default.
    pub fn string_or(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn f64(&mut self, key: &str) -> Result<f64, CliError> {
        let raw = self.string(key)?;
        Self::parse_as(key, &raw, "a number")
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(raw) => Self::parse_as(key, &raw.to_string(), "a number"),
        }
    }

    /// Optional number; absent means `None`.
    pub fn f64_opt(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) => Self::parse_as(key, &raw.to_string(), "a number").map(Some),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(raw) => Self::parse_as(key, &raw.to_string(), "a nonnegative integer"),
        }
    }

    pub fn u64(&mut self, key: &str) -> Result<u64, CliError> {
        let raw = self.string(key)?;
        Self::parse_as(key, &raw, "a nonnegative integer")
    }

    /// Optional comma-separated list of numbers with a default.
    pub fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(raw) => {
                let raw = raw.to_string();
                let list = raw
                    .split(',')
                    .map(|item| Self::parse_as(key, item.trim(), "a number"))
                    .collect::<Result<Vec<f64>, CliError>>()?;
                if list.is_empty() {
                    return Err(CliError::config(key, "list must be non-empty"));
                }
                Ok(list)
            }
        }
    }

    /// Optional comma-separated list of integers with a default.
    pub fn usize_list_or(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(raw) => {
                let raw = raw.to_string();
                raw.split(',')
                    .map(|item| Self::parse_as(key, item.trim(), "a nonnegative integer"))
                    .collect()
            }
        }
    }

    /// The mandatory seed. Configs must be reproducible, so there is no
    /// wall-clock fallback.
    pub fn seed(&mut self) -> Result<u64, CliError> {
        let raw = self
            .raw(SEED_KEY)
            .ok_or_else(|| CliError::config(SEED_KEY, "missing required key"))?
            .to_string();
        Self::parse_as(SEED_KEY, &raw, "a nonnegative integer")
    }

    /// Fails if any key was never consumed by a getter. The seed key is
    /// exempt: the harness reads it, not the study.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| *k != SEED_KEY && !self.consumed.contains(*k))
            .map(|k| k.as_str())
            .collect();
        match unknown.first() {
            None => Ok(()),
            Some(first) => Err(CliError::config(
                *first,
                format!("unknown key(s) for this study: {}", unknown.join(", ")),
            )),
        }
    }

    /// Canonical serialization: sorted `key=value` lines, excluding the
    /// seed so a seed override does not change the config identity.
    pub fn canonical_string(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != SEED_KEY)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`Config::canonical_string`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
