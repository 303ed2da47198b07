//! Layered run configuration: built-in defaults, then an optional JSON file,
//! then explicit flags, then `--set key=value` overrides. Every layer is
//! checked against the keys of the defaults, so a misspelt key is an error
//! rather than a silently ignored setting.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// One override: a dotted path into the config object and its new value.
pub type Override = (String, Value);

/// Parses `key=value`. The value is read as JSON when it parses, otherwise
/// taken as a bare string, so `--set mode=ilvr` and `--set n=4` both work.
pub fn parse_set(raw: &str) -> Result<Override, CliError> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{raw}' is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Usage(format!("override '{raw}' has an empty key")));
    }
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), v))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| format!("'{key}': '{}' is not an object", parts[..i].join(".")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| format!("unknown config key '{key}'"))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split yields at least one part")
}

/// Deep merge of `over` into `base`; keys absent from `base` are rejected.
fn merge(base: &mut Value, over: Map<String, Value>, prefix: &str) -> Result<(), String> {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = base
            .as_object_mut()
            .and_then(|o| o.get_mut(&k))
            .ok_or_else(|| format!("unknown config key '{path}'"))?;
        match (slot.is_object(), v) {
            (true, Value::Object(m)) => merge(slot, m, &path)?,
            (_, v) => *slot = v,
        }
    }
    Ok(())
}

/// Reads a config file. Accepts either a bare config object or a resolved
/// snapshot written by a previous run of the same subcommand.
pub fn read_file(path: &Path, command: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: malformed config: {e}", path.display())))?;
    let Value::Object(mut obj) = v else {
        return Err(CliError::Domain(format!("{}: config must be a JSON object", path.display())));
    };
    if let Some(cmd) = obj.get("command") {
        if cmd.as_str() != Some(command) {
            return Err(CliError::Domain(format!("{}: snapshot is for '{cmd}', not '{command}'", path.display())));
        }
        return match obj.remove("config") {
            Some(Value::Object(c)) => Ok(c),
            _ => Err(CliError::Domain(format!("{}: snapshot has no config object", path.display()))),
        };
    }
    Ok(obj)
}

/// Applies the layers on top of `C::default()` and deserializes the result.
pub fn resolve<C: Serialize + DeserializeOwned + Default>(
    command: &str,
    file: Option<&Path>,
    flags: Vec<Override>,
    sets: &[String],
) -> Result<C, CliError> {
    let mut v = serde_json::to_value(C::default()).map_err(|e| CliError::Domain(e.to_string()))?;
    if let Some(path) = file {
        let obj = read_file(path, command)?;
        merge(&mut v, obj, "").map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    }
    for (k, val) in flags {
        set_path(&mut v, &k, val).map_err(CliError::Usage)?;
    }
    for raw in sets {
        let (k, val) = parse_set(raw)?;
        set_path(&mut v, &k, val).map_err(CliError::Usage)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Domain(format!("invalid {command} config: {e}")))
}

/// Collects the flags a user actually passed as overrides.
#[derive(Default)]
pub struct Flags(Vec<Override>);

impl Flags {
    pub fn opt<T: Serialize>(mut self, key: &str, v: &Option<T>) -> Self {
        if let Some(x) = v {
            self.0.push((key.to_string(), serde_json::to_value(x).expect("flag values serialize")));
        }
        self
    }

    pub fn done(self) -> Vec<Override> {
        self.0
    }
}
