//! Plain-text `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys may appear at most once. Interpretation of keys is left to the
//! consumer ([`crate::trainer::TrainConfig`], [`crate::data::SyntheticConfig`]).

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl KvEntry {
    pub fn parse<T>(&self) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.value.parse::<T>().map_err(|e| {
            Error::config_at(self.line, format!("bad value `{}` for `{}`: {e}", self.value, self.key))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<KvEntry>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<KvEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::config_at(line, format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::config_at(line, format!("invalid key `{key}`")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::config_at(
                    line,
                    format!("`{key}` already set on line {}", prev.line),
                ));
            }
            entries.push(KvEntry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(KvFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[KvEntry] {
        &self.entries
    }
}

#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str(&format!("# {text}\n"));
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}
