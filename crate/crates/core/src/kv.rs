//! Plain-text `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, keys may repeat (e.g. one
//! `scatterer` line per reflector).

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    source: String,
    entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{}`", line),
                });
            };
            entries.push((k.trim().to_string(), v.trim().to_string(), i + 1));
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Fails on any key outside `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, line) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(self.err(*line, format!("unknown key `{}`", k)));
            }
        }
        Ok(())
    }

    pub fn get_all<'a, 'k>(&'a self, key: &'k str) -> impl Iterator<Item = (&'a str, usize)> + use<'a, 'k> {
        self.entries
            .iter()
            .filter(move |(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    /// Last occurrence wins.
    pub fn get_raw(&self, key: &str) -> Option<(&str, usize)> {
        self.get_all(key).last()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get_raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.err(line, format!("cannot parse `{}` for key `{}`", v, key))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.source.clone(),
            line: 0,
            msg: format!("missing key `{}`", key),
        })
    }

    /// Comma-separated list value.
    pub fn parse_list<T: FromStr>(&self, value: &str, line: usize) -> Result<Vec<T>> {
        value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| self.err(line, format!("cannot parse list element `{}`", s.trim())))
            })
            .collect()
    }
}

/// Writes entries in order as `key = value` lines.
pub fn format_entries(entries: &[(&str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_repeats() {
        let kv = KvFile::parse("# header\na = 1\nb=2.5 # trailing\n\na = 3\nlist = 1, 2,3\n", "t").unwrap();
        assert_eq!(kv.get::<i32>("a").unwrap(), Some(3));
        assert_eq!(kv.get::<f64>("b").unwrap(), Some(2.5));
        assert_eq!(kv.get_all("a").count(), 2);
        let (v, l) = kv.get_raw("list").unwrap();
        assert_eq!(kv.parse_list::<u32>(v, l).unwrap(), vec![1, 2, 3]);
        assert!(kv.expect_keys(&["a", "b"]).is_err());
        kv.expect_keys(&["a", "b", "list"]).unwrap();
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(KvFile::parse("novalue\n", "x"), Err(Error::Parse { line: 1, .. })));
        let kv = KvFile::parse("n = abc", "x").unwrap();
        assert!(kv.get::<u32>("n").is_err());
        assert!(kv.require::<u32>("missing").is_err());
    }
}
