//! Flat `key = value` config files and flag/file/default resolution.
//!
//! Precedence is: command-line flag, then config file, then built-in
//! default. Keys use the same kebab-case names as the long flags; unknown
//! keys are rejected outright. Lines starting with `#` and blank lines are
//! ignored.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Every key any subcommand understands. A single file can configure a
/// whole train-then-eval pipeline.
const KNOWN_KEYS: &[&str] = &[
    "data",
    "format",
    "output",
    "checkpoint",
    "k",
    "d",
    "epsilon",
    "lr",
    "max-epochs",
    "rel-tol",
    "sigma-clamp",
    "seed",
    "threads",
    "min-item-interactions",
    "folds",
    "fold",
    "optimizer",
    "neg-ratio",
    "cutoff",
    "scorer",
    "per-user",
    "export-id-maps",
    "users",
    "items",
    "density",
    "sizes",
    "epochs",
    "top",
];

/// Usage-level error: wrong invocation rather than bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!(
                    "{}:{}: unknown config key '{key}'",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    /// flag > file > default
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        if let Some(value) = flag {
            return Ok(value);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| UsageError(format!("config key '{key}': {e}"))),
            None => Ok(default),
        }
    }

    /// Same, but with no default: the value must come from somewhere.
    pub fn resolve_required<T>(&self, flag: Option<T>, key: &str) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(value) = flag {
            return Ok(value);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| UsageError(format!("config key '{key}': {e}"))),
            None => Err(UsageError(format!(
                "missing required option '--{key}' (flag or config file)"
            ))),
        }
    }
}
