//! Line-oriented `key = value` config files.
//!
//! Blank lines and `#` comments are ignored. Each consumer decides which
//! keys it accepts; anything else is an error carrying the line number.

use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e: T::Err| ConfigError::Value {
            line: self.line,
            key: self.key.clone(),
            reason: e.to_string(),
        })
    }

    pub fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            line: self.line,
            key: self.key.clone(),
        }
    }
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

/// Comma-separated list, e.g. `1, 4, 7`.
pub fn parse_list<T: FromStr>(entry: &Entry) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    entry
        .value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|e: T::Err| ConfigError::Value {
                line: entry.line,
                key: entry.key.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}
