//! Config-file loading and flag/file/default resolution.
//!
//! The optional config file is flat `key = value` text using the long flag
//! names (without the leading dashes). Flags override file values; defaults
//! fill the rest. Exit code 2 is reserved for configuration problems, 1 for
//! runtime failures.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file, or unresolvable paths: exit 2.
    Config(String),
    /// Runtime failure: exit 1.
    Hard(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Hard(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hard(_) => 1,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "input",
    "output",
    "mode",
    "oracle",
    "endpoint",
    "model",
    "concurrency",
    "delimiter",
    "tokenizer",
    "shape",
    "epsilon",
    "s-min",
    "penalty-mode",
    "lambda",
    "seed",
    "replay-cache",
];

/// Parsed config file contents.
#[derive(Debug, Default)]
pub struct FileCfg(HashMap<String, String>);

impl FileCfg {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(FileCfg::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut map = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "config line {} is not `key = value`: {raw}",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown config key `{key}` at line {}",
                    idx + 1
                )));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(FileCfg(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Config(format!("config key `{key}` has invalid value `{raw}`: {e}"))
            }),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }
}

/// Interprets `\n`, `\t`, `\r`, and `\\` escapes so delimiters like the
/// default blank line survive shell quoting and config files.
pub fn unescape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Flag value wins, then config file, then the default.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn unescape_handles_sequences() {
        assert_eq!(unescape("\\n\\n"), "\n\n");
        assert_eq!(unescape("a\\tb"), "a\tb");
        assert_eq!(unescape("a\\\\n"), "a\\n");
        assert_eq!(unescape("plain"), "plain");
        assert_eq!(unescape("\\x"), "\\x");
    }

    #[test]
    fn config_file_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment").unwrap();
        writeln!(file, "mode = parallel").unwrap();
        writeln!(file, "concurrency = 4").unwrap();
        writeln!(file, "delimiter = \\n\\n").unwrap();
        let cfg = FileCfg::load(Some(file.path())).unwrap();
        assert_eq!(cfg.get("mode"), Some("parallel"));
        assert_eq!(cfg.parse::<usize>("concurrency").unwrap(), Some(4));
        assert_eq!(unescape(cfg.get("delimiter").unwrap()), "\n\n");
        assert_eq!(cfg.get("oracle"), None);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "bogus = 1").unwrap();
        let err = FileCfg::load(Some(file.path())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "just words").unwrap();
        assert!(FileCfg::load(Some(file.path())).is_err());
    }

    #[test]
    fn resolution_precedence() {
        assert_eq!(resolve(Some(1), Some(2), 3), 1);
        assert_eq!(resolve(None, Some(2), 3), 2);
        assert_eq!(resolve::<i32>(None, None, 3), 3);
    }
}
