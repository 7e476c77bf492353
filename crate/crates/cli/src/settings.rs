//! `key=value` run configuration, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

const KNOWN_KEYS: &[&str] = &[
    "inputs",
    "tol",
    "max_iters",
    "taus",
    "bins",
    "groups",
    "min_group_size",
    "seed",
    "workers",
    "orderings",
    "replicates",
    "nodes",
    "graph",
    "attach",
    "density",
    "collectors",
    "periods",
    "p_miss",
    "p_false_edge",
    "p_reroute",
];

/// Raw values from a config file. Blank lines and `#` comments are ignored.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key=value", i + 1);
            };
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                bail!("line {}: unknown key '{k}'", i + 1);
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key '{k}'", i + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| anyhow::anyhow!("config key '{key}': invalid value '{v}'")),
        }
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| anyhow::anyhow!("config key '{key}': invalid item '{s}'")))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

/// Flag value if given, else config value, else `default`.
pub fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

/// Canonical `key=value` lines of the settings a stage actually used; hashed
/// into artifact headers.
#[derive(Debug, Default, Clone)]
pub struct Resolved {
    entries: BTreeMap<String, String>,
}

impl Resolved {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = ConfigFile::parse("# run\ntol = 1e-8\ntaus=0.2, 0.7\n\nseed=3\n").unwrap();
        assert_eq!(c.get::<f64>("tol").unwrap(), Some(1e-8));
        assert_eq!(c.list::<f64>("taus").unwrap(), Some(vec![0.2, 0.7]));
        assert_eq!(pick(Some(9u64), &c, "seed", 0).unwrap(), 9);
        assert_eq!(pick(None, &c, "seed", 0u64).unwrap(), 3);
        assert_eq!(pick(None, &c, "orderings", 10usize).unwrap(), 10);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("tol 1e-8\n").is_err());
        assert!(ConfigFile::parse("colour=red\n").is_err());
        assert!(ConfigFile::parse("seed=1\nseed=2\n").is_err());
        assert!(ConfigFile::parse("seed=x\n").unwrap().get::<u64>("seed").is_err());
    }

    #[test]
    fn canonical_is_sorted() {
        let mut r = Resolved::default();
        r.set("b", 2).set("a", 1);
        assert_eq!(r.canonical(), "a=1\nb=2\n");
    }
}
