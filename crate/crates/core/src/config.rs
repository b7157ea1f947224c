//! Flat `key = value` configuration files and run manifests.
//!
//! One key per line, dotted section prefixes (`train.epochs = 29`), `#`
//! comments. Commands resolve their settings as defaults < config file <
//! command-line flags, then dump the effective map back out as the run
//! manifest, so re-running from a manifest reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected integer, got {v:?}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected integer, got {v:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected number, got {v:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") | Some("on") => Ok(true),
            Some("false") | Some("0") | Some("no") | Some("off") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key}: expected boolean, got {v:?}"))),
        }
    }

    /// Serializes sorted by key, one `key = value` per line, LF endings.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Applies `overrides` on top of `self` (overrides win).
    pub fn overlay(&self, overrides: &Config) -> Config {
        let mut merged = self.clone();
        for (k, v) in &overrides.entries {
            merged.entries.insert(k.clone(), v.clone());
        }
        merged
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# comment\ntrain.epochs = 29\nrestore.steps = 100\n";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.get("train.epochs"), Some("29"));
        assert_eq!(cfg.u64_or("restore.steps", 0).unwrap(), 100);
        let rendered = cfg.render();
        let again = Config::parse(&rendered).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overlay_prefers_overrides() {
        let base = Config::parse("a = 1\nb = 2\n").unwrap();
        let over = Config::parse("b = 3\n").unwrap();
        let merged = base.overlay(&over);
        assert_eq!(merged.get("a"), Some("1"));
        assert_eq!(merged.get("b"), Some("3"));
    }

    #[test]
    fn typed_getters_validate() {
        let cfg = Config::parse("x = nope\n").unwrap();
        assert!(cfg.f64_or("x", 0.0).is_err());
        assert_eq!(cfg.f64_or("missing", 1.5).unwrap(), 1.5);
        assert!(cfg.bool_or("x", false).is_err());
    }
}
