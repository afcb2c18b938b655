//! Flat `key = value` text configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Consumers pull the keys
//! they understand with the `take_*` methods and call [`KvConfig::finish`],
//! which rejects anything left over.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::invalid(format!("config line {line_no}: empty key")));
            }
            if entries
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::invalid(format!(
                    "config line {line_no}: duplicate key `{key}`"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inserts or replaces a key (used for command-line overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), (0, value.into()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Removes every `prefix*` key and returns them with the prefix stripped.
    pub fn take_prefixed(&mut self, prefix: &str) -> KvConfig {
        let keys = self.keys_with_prefix(prefix);
        let mut entries = BTreeMap::new();
        for k in keys {
            let v = self.entries.remove(&k).expect("key listed above");
            entries.insert(k[prefix.len()..].to_string(), v);
        }
        KvConfig { entries }
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::invalid(format!(
                    "config key `{key}` (line {line}): cannot parse {v:?}"
                ))
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn take_required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::invalid(format!("missing required config key `{key}`")))
    }

    /// Comma-separated list of values.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => parse_list(&v).map(Some).ok_or_else(|| {
                Error::invalid(format!(
                    "config key `{key}` (line {line}): cannot parse {v:?}"
                ))
            }),
        }
    }

    /// Errors if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::invalid(format!(
                "unknown config key `{key}` (line {line})"
            )));
        }
        Ok(())
    }
}

/// Comma-separated values; `None` if any item fails to parse.
pub fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().ok())
        .collect()
}
