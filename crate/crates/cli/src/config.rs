//! TOML configuration with dotted-key overrides.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::Value;

use crate::UsageError;

/// Starts from `defaults`, merges the optional TOML file, then applies each
/// `key=value` override in order.
pub fn load<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut root = Value::try_from(defaults).context("serializing default configuration")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        merge(&mut root, parsed);
    }
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| UsageError(format!("override `{o}` is not key=value")))?;
        set(&mut root, key.trim(), parse_scalar(raw.trim()))?;
    }
    root.try_into().map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {}", e.message())).into())
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| UsageError(format!("`{key}`: `{part}` is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    Err(UsageError(format!("empty override key `{key}`")).into())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
