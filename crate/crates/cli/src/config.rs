//! JSON run configs: defaults overlaid with user documents, with every
//! unknown key reported at once.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Recursively overlays `user` onto `base`. Objects merge key by key, except
/// that an object whose `kind` tag changes is replaced wholesale.
pub fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            let retagged = matches!((b.get("kind"), u.get("kind")), (Some(x), Some(y)) if x != y);
            if retagged {
                *b = u;
                return;
            }
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

/// Union of the key trees of several sample documents.
pub fn schema(samples: &[Value]) -> Value {
    let mut out = Value::Null;
    for s in samples {
        union(&mut out, s);
    }
    out
}

fn union(acc: &mut Value, v: &Value) {
    match (acc, v) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, bv) in b {
                union(a.entry(k.clone()).or_insert(Value::Null), bv);
            }
        }
        (a @ Value::Null, v) => *a = v.clone(),
        _ => {}
    }
}

/// Dotted paths of keys in `user` that `schema` does not know. A `null`
/// in the schema (an optional value) accepts anything below it.
pub fn unknown_keys(user: &Value, schema: &Value) -> Vec<String> {
    let mut out = Vec::new();
    walk(user, schema, "", &mut out);
    out
}

fn walk(user: &Value, schema: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(s)) = (user, schema) else {
        return;
    };
    for (k, v) in u {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            Some(sv) => walk(v, sv, &path, out),
            None => out.push(path),
        }
    }
}

/// `path = default` lines for every leaf of `schema`.
pub fn key_listing(schema: &Value) -> Vec<String> {
    let mut out = Vec::new();
    leaves(schema, "", &mut out);
    out
}

fn leaves(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, sub) in m {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(sub, &path, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}

/// A subcommand's config document.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    /// Extra documents whose keys are also accepted (alternative tagged
    /// variants and the like).
    fn alternatives() -> Vec<Self> {
        Vec::new()
    }

    /// Every violated constraint, prefixed by its key path.
    fn check(&self) -> Vec<String>;

    fn schema() -> Value {
        let mut docs = vec![serde_json::to_value(Self::default()).expect("config serialises")];
        docs.extend(Self::alternatives().into_iter().map(|d| serde_json::to_value(d).expect("config serialises")));
        schema(&docs)
    }

    /// Extra remarks appended to the key listing.
    fn notes() -> &'static str {
        ""
    }

    fn help() -> String {
        let mut s = String::from("Config keys (JSON file via --config; dotted path = default):\n");
        s.push_str(&key_listing(&Self::schema()).join("\n"));
        if !Self::notes().is_empty() {
            s.push_str("\n\n");
            s.push_str(Self::notes());
        }
        s
    }
}

/// Loads the config at `path` (or the defaults), applies command-line
/// overrides, then rejects unknown keys and invalid values with a complete
/// list.
pub fn load<C: RunConfig>(path: Option<&Path>, overrides: impl FnOnce(&mut C)) -> Result<C, CliError> {
    let mut doc = serde_json::to_value(C::default()).expect("config serialises");
    if let Some(path) = path {
        let body = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let user: Value =
            serde_json::from_str(&body).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        if !user.is_object() {
            return Err(CliError::Config(vec![format!("{}: top level must be an object", path.display())]));
        }
        let unknown = unknown_keys(&user, &C::schema());
        if !unknown.is_empty() {
            return Err(CliError::Config(unknown.into_iter().map(|k| format!("{k}: unknown key")).collect()));
        }
        merge(&mut doc, user);
    }
    let mut cfg: C = serde_json::from_value(doc).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    overrides(&mut cfg);
    let errs = cfg.check();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(errs))
    }
}

/// Canonical JSON (sorted keys) used for hashing and echoing.
pub fn canonical<C: Serialize>(cfg: &C) -> Value {
    let v = serde_json::to_value(cfg).expect("config serialises");
    sort(v)
}

fn sort(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort(v))).collect::<Map<_, _>>())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_values() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, json!({"b": {"d": 4}}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}}));
    }

    #[test]
    fn merge_replaces_retagged_objects() {
        let mut base = json!({"opt": {"kind": "adam", "lr": 0.001, "beta1": 0.9}});
        merge(&mut base, json!({"opt": {"kind": "sgd", "lr": 0.1}}));
        assert_eq!(base, json!({"opt": {"kind": "sgd", "lr": 0.1}}));
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let s = schema(&[json!({"a": 1, "b": {"c": 2}, "p": null})]);
        let user = json!({"a": 2, "x": 1, "b": {"c": 1, "y": 2}, "p": {"anything": 1}});
        let mut keys = unknown_keys(&user, &s);
        keys.sort();
        assert_eq!(keys, ["b.y", "x"]);
    }

    #[test]
    fn schema_unions_alternatives() {
        let s = schema(&[json!({"o": {"kind": "a", "x": 1}}), json!({"o": {"kind": "b", "y": 2}})]);
        assert!(unknown_keys(&json!({"o": {"kind": "b", "y": 1, "x": 2}}), &s).is_empty());
        assert_eq!(key_listing(&s), ["  o.kind = \"a\"", "  o.x = 1", "  o.y = 2"]);
    }

    #[test]
    fn canonical_sorts_keys() {
        let v = sort(json!({"b": 1, "a": {"d": 1, "c": 2}}));
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"a":{"c":2,"d":1},"b":1}"#);
    }
}
