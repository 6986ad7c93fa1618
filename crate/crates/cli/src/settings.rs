//! Layered settings: built-in defaults, then the matching table of the
//! config file, then flags given on the command line.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::exit::Failure;

/// Parsed `--config` file: one table per subcommand plus `[global]`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    tables: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let value: toml::Value = toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let Value::Object(tables) = serde_json::to_value(value).map_err(|e| Failure::config(e.to_string()))? else {
            return Err(Failure::config(format!("{}: expected a table", path.display())));
        };
        for (key, v) in &tables {
            if !v.is_object() {
                return Err(Failure::config(format!("{}: top-level key {key:?} must be a table", path.display())));
            }
        }
        Ok(Self { tables })
    }

    /// Merges `[section]` with the explicit flags in `flags` and deserializes
    /// the result; keys unknown to `T` are rejected.
    pub fn resolve<T: DeserializeOwned, F: Serialize>(&self, section: &str, flags: &F) -> Result<T, Failure> {
        let mut merged = self.tables.get(section).cloned().unwrap_or_else(|| Value::Object(Map::new()));
        let Value::Object(flags) = serde_json::to_value(flags).map_err(|e| Failure::config(e.to_string()))? else {
            return Err(Failure::config("flags must serialize to a map".into()));
        };
        let target = merged.as_object_mut().expect("sections are tables");
        for (k, v) in flags {
            if !v.is_null() {
                target.insert(k, v);
            }
        }
        serde_json::from_value(merged).map_err(|e| Failure::config(format!("[{section}]: {e}")))
    }
}

/// Prints the resolved settings of a run on stderr as one JSON object.
pub fn announce<T: Serialize>(command: &str, global: &GlobalSettings, settings: &T) {
    let value = serde_json::json!({ "command": command, "global": global, "settings": settings });
    eprintln!("resolved config: {value}");
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalSettings {
    pub seed: u64,
    /// Worker threads; `0` uses every core.
    pub threads: usize,
    pub deterministic: bool,
    pub log_level: String,
}

impl Default for GlobalSettings {
    fn default() -> Self {
        Self { seed: 0, threads: 0, deterministic: false, log_level: "info".into() }
    }
}

/// Output path helper: `path` with its extension replaced.
pub fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}
