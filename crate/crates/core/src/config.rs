//! Flat `key=value` configuration files.
//!
//! ```text
//! # comment
//! rbm.eta = 0.05
//! rbm.epochs = 10
//! kernel.layers = 0,5,25
//! ```
//!
//! Keys carry their section as a dotted prefix. Blank lines and lines starting
//! with `#` are ignored; a repeated key is an error.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if entries.insert(key.to_owned(), value.trim().to_owned()).is_some() {
                return Err(Error::config(key, format!("repeated on line {}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::config(path.display().to_string(), format!("line {line}: {msg}")),
            other => other,
        })
    }

    /// Sets or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::config(key, "missing"))
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    /// Fails on the first key outside `known`, naming it.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        match self.entries.keys().find(|k| !known.contains(k.as_str())) {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_lists() {
        let c = Config::parse("# header\nrbm.eta = 0.05\n\nkernel.layers=0, 5,25\nwide.mode=exact\n").unwrap();
        assert_eq!(c.require::<f64>("rbm.eta").unwrap(), 0.05);
        assert_eq!(c.get_list::<usize>("kernel.layers").unwrap().unwrap(), vec![0, 5, 25]);
        assert_eq!(c.raw("wide.mode"), Some("exact"));
        assert_eq!(c.get_or("rbm.epochs", 20usize).unwrap(), 20);
    }

    #[test]
    fn errors_name_the_key() {
        let c = Config::parse("rbm.eta=fast").unwrap();
        match c.get::<f64>("rbm.eta") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "rbm.eta"),
            other => panic!("{other:?}"),
        }
        match c.reject_unknown(&["rbm.epochs"]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "rbm.eta"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Config::parse("a=1\na=2"), Err(Error::Config { .. })));
        assert!(matches!(Config::parse("novalue"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::new().require::<u64>("x"), Err(Error::Config { .. })));
    }
}
