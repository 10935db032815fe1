//! Seed derivation and the plain-text `key = value` config format.
//!
//! Every stage of the pipeline draws its randomness from one master seed
//! through [`derive_seed`], so stages are independently reproducible: the
//! synthesis stage always sees `derive_seed(master, "synth")` no matter which
//! other stages ran before it.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::Result;

/// Derive a named sub-seed from a master seed: the first 8 bytes
/// (little-endian) of `SHA-256("{master}:{name}")`. Stable across platforms
/// and releases; changing it would silently re-randomize every pipeline.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}:{name}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("SHA-256 yields 32 bytes"))
}

/// Parsed `key = value` configuration. Keys are unique; later lines override
/// earlier ones. Lines that are blank or start with `#` are ignored, and a
/// trailing `# comment` after the value is stripped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse from file contents; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{origin}:{}: expected `key = value`, got `{raw}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{origin}:{}: empty key",
                    lineno + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("key `{key}`: `{raw}` is not a valid {kind}"))
            }),
        }
    }

    /// Typed getters: `Ok(None)` when the key is absent, an error when the
    /// value does not parse.
    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parsed(key, "unsigned integer")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "unsigned integer")
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key, "number")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("true") | Some("1") | Some("on") => Ok(Some(true)),
            Some("false") | Some("0") | Some("off") => Ok(Some(false)),
            Some(other) => Err(Error::InvalidConfig(format!(
                "key `{key}`: `{other}` is not a boolean (use true/false)"
            ))),
        }
    }
}
