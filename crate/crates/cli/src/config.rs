use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A run configuration after `--set` overrides, with the directory relative
/// paths resolve against.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub value: Value,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path, sets: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(RunConfig { value, base })
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        serde_json::from_value(self.value.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Hex SHA-256 of the canonical (sorted-key, compact) JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(&self.value).as_bytes()))
    }
}

pub fn canonical_json(v: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(v)).expect("JSON values always serialize")
}

/// `a.b.0.c=value`: the value is parsed as JSON, falling back to a string.
/// Numeric segments index arrays; missing object keys are created.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    if path.is_empty() {
        return Err(CliError::Config("override with an empty key".into()));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for seg in path.split('.') {
        cur = match cur {
            Value::Array(a) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{seg}` in `{path}` is not an array index")))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| CliError::Config(format!("index {i} out of range ({len}) in `{path}`")))?
            }
            Value::Object(m) => m.entry(seg.to_string()).or_insert(Value::Null),
            v @ Value::Null => {
                *v = Value::Object(Default::default());
                v.as_object_mut().expect("just set").entry(seg.to_string()).or_insert(Value::Null)
            }
            _ => return Err(CliError::Config(format!("cannot descend into `{seg}` of `{path}`"))),
        };
    }
    *cur = new;
    Ok(())
}
