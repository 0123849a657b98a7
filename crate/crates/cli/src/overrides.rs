//! Dotted-key overrides on a JSON config, type-checked against the value
//! they replace.

use serde_json::Value;

use crate::CliError;

/// Recursively overlays `patch` onto `base`. Keys absent from `base` are
/// kept so that deserialization can reject them by name.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_u64() || n.is_i64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON, falling
/// back to a bare string.
pub fn apply(config: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let mut slot = &mut *config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let compatible = match (kind(slot), kind(&new)) {
        (a, b) if a == b => true,
        ("number", "integer") => true,
        // optional fields accept anything; deserialization has the final say
        ("null", _) | (_, "null") => true,
        _ => false,
    };
    if !compatible {
        return Err(CliError::Usage(format!(
            "override {key}: expected {}, got {} ({raw})",
            kind(slot),
            kind(&new)
        )));
    }
    *slot = new;
    Ok(())
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn nested_override_replaces_value() {
        let mut v = json!({"cia": {"k1": 3, "sci": true}, "optimizer": {"lr0": 0.1}});
        apply(&mut v, "cia.k1=5").unwrap();
        apply(&mut v, "cia.sci=false").unwrap();
        apply(&mut v, "optimizer.lr0=1").unwrap();
        assert_eq!(
            v,
            json!({"cia": {"k1": 5, "sci": false}, "optimizer": {"lr0": 1}})
        );
    }

    #[test]
    fn type_and_key_errors() {
        let mut v = json!({"cia": {"k1": 3}, "name": "x"});
        assert!(apply(&mut v, "cia.k1=1.5").is_err());
        assert!(apply(&mut v, "cia.k1=yes").is_err());
        assert!(apply(&mut v, "cia.k9=1").is_err());
        assert!(apply(&mut v, "cia.k1").is_err());
        apply(&mut v, "name=hello world").unwrap();
        assert_eq!(v["name"], "hello world");
    }

    #[test]
    fn merge_keeps_unknown_keys_for_rejection() {
        let mut v = json!({"a": {"b": 1, "c": 2}});
        merge(&mut v, json!({"a": {"b": 5}, "zzz": 1}));
        assert_eq!(v, json!({"a": {"b": 5, "c": 2}, "zzz": 1}));
    }
}
