//! Configuration files: `key = value` lines, `#` comments, and optional
//! `[subcommand]` sections.
//!
//! Keys are long flag names without the dashes. Keys before the first section
//! apply to every subcommand that has that flag; keys inside a section apply
//! to that subcommand only, and must exist there. Boolean flags take `true`
//! or `false`. Flags given on the command line override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "FAREY_SKEW_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}: expected `key = value` or `[section]`, got {text:?}")]
    Syntax { origin: String, line: usize, text: String },
    #[error("config key {key:?} is not a flag of `{section}`")]
    UnknownKey { section: String, key: String },
    #[error("config key {key:?} needs true or false, got {value:?}")]
    NotBoolean { key: String, value: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub global: Vec<(String, String)>,
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut out = ConfigFile::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = || ConfigError::Syntax { origin: origin.to_string(), line: i + 1, text: raw.to_string() };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(syntax());
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(syntax)?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.starts_with('-') {
                return Err(syntax());
            }
            let entry = (key.to_string(), value.to_string());
            match &section {
                Some(s) => out.sections.entry(s.clone()).or_default().push(entry),
                None => out.global.push(entry),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        ConfigFile::parse(&text, &path.display().to_string())
    }

    /// Entries for `subcommand`, global ones first so section values win.
    /// The flag is true for section entries.
    pub fn entries_for<'a>(&'a self, subcommand: &str) -> impl Iterator<Item = (&'a str, &'a str, bool)> + 'a {
        let section = self.sections.get(subcommand).map(Vec::as_slice).unwrap_or(&[]);
        self.global
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str(), false))
            .chain(section.iter().map(|(k, v)| (k.as_str(), v.as_str(), true)))
    }
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::NotBoolean { key: key.to_string(), value: value.to_string() }),
    }
}
