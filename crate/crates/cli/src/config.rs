//! Flat `key = value` configuration files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys
//! are flag names without the leading dashes; `snake_case` is accepted as
//! an alias of `kebab-case`.

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub source: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.source, self.line, self.message)
    }
}

pub fn parse(text: &str, source: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError { source: source.to_string(), line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(err("missing key".into()));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(err(format!("duplicate key '{key}' (first set on line {})", prev.line)));
        }
        entries.push(Entry { key, value, line });
    }
    Ok(entries)
}

/// Parse `path` and check every key against `known` flag names.
pub fn load(path: &Path, known: &[String]) -> Result<Vec<Entry>, ConfigError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        source: source.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let entries = parse(&text, &source)?;
    for e in &entries {
        if !known.iter().any(|k| *k == e.key) || e.key == "config" {
            return Err(ConfigError {
                source: source.clone(),
                line: e.line,
                message: format!("unknown key '{}'", e.key),
            });
        }
    }
    Ok(entries)
}

/// Config entries as `--key=value` arguments, to be placed before the
/// command-line flags so that explicit flags win.
pub fn as_args(entries: &[Entry]) -> Vec<OsString> {
    entries.iter().map(|e| OsString::from(format!("--{}={}", e.key, e.value))).collect()
}
