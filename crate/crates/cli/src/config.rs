//! TOML config files that mirror command flags.
//!
//! A config file is a flat table whose keys are the flag names of the
//! invoked command in snake case (`batch_size = 16`). Flags given on the
//! command line win over the file.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::UsageError;

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

fn to_table<T: Serialize>(value: &T) -> anyhow::Result<toml::Table> {
    Ok(toml::Table::try_from(value)?)
}

/// Overlays the flags in `flags` on the optional config file at `path`.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(toml::Table::try_from(flags)?.try_into()?);
    };
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    for (k, v) in to_table(flags)? {
        table.insert(k, v);
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("config {}: {}", path.display(), e.message())).into())
}

/// Writes the fully resolved settings next to a command's outputs.
pub fn write_resolved<T: Serialize>(command: &str, resolved: &T, dir: &Path) -> anyhow::Result<()> {
    let body = toml::to_string(resolved)?;
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, format!("# divattn {command}\n{body}"))
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}
