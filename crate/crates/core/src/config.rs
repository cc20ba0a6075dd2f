//! Flat `key = value` text files.
//!
//! Blank lines and lines starting with `#` are ignored. Every entry keeps its
//! source location so that later validation errors can point at it.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub location: String,
}

impl KvEntry {
    pub fn new(key: impl Into<String>, value: impl Into<String>, location: impl Into<String>) -> Self {
        KvEntry {
            key: key.into(),
            value: value.into(),
            location: location.into(),
        }
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::Config {
            location: self.location.clone(),
            reason: format!("`{}`: {}", self.key, reason.into()),
        }
    }

    /// Parses the value, naming key and location on failure.
    pub fn parse<T>(&self) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.value
            .parse()
            .map_err(|e: T::Err| self.error(format!("cannot parse `{}`: {e}", self.value)))
    }
}

/// Splits `text` into entries; `source` names the file in locations.
pub fn parse_kv(text: &str, source: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let location = format!("{source}:{}", i + 1);
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            location: location.clone(),
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config {
                location,
                reason: "empty key".into(),
            });
        }
        out.push(KvEntry::new(key, v.trim(), location));
    }
    Ok(out)
}

/// Drops a `#` comment that starts the line or follows whitespace.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Renders pairs one per line, in order.
pub fn format_kv<K: AsRef<str>>(pairs: &[(K, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{} = {v}\n", k.as_ref()))
        .collect()
}

/// Comma-separated list, e.g. `64,64`.
pub fn parse_list<T>(entry: &KvEntry) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if entry.value.trim().is_empty() {
        return Ok(Vec::new());
    }
    entry
        .value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e: T::Err| entry.error(format!("bad list element `{}`: {e}", s.trim())))
        })
        .collect()
}

pub fn format_list<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
