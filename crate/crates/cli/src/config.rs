//! Loading the TOML run configuration and applying command-line overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use pcegp::bench::BenchmarkConfig;
use toml::{Table, Value};

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

/// Sets the dotted `key` (e.g. `search.n_trials`) in `table`.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key {key:?}: {part:?} is not a table"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// Reads the config file (if any), applies overrides and the seed flag, and
/// resolves a relative data path against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<BenchmarkConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            text.parse::<Table>()
                .with_context(|| format!("config {} is not valid TOML", p.display()))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    let mut config: BenchmarkConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid configuration: {}", e.message()))?;
    if let Some(dir) = path.and_then(Path::parent) {
        if config.data.path.is_relative() && !config.data.path.as_os_str().is_empty() {
            config.data.path = dir.join(&config.data.path);
        }
    }
    config.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(config)
}
