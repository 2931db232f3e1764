//! A small JSON-schema subset used by schema guardrails and tool parameter
//! validation: `type`, `required`, `properties`, `additionalProperties`
//! (boolean), `enum`, `minimum`, `maximum`, `minLength`, `maxLength`, `items`.

use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    doc: Value,
}

const KNOWN_TYPES: [&str; 7] = ["object", "array", "string", "integer", "number", "boolean", "null"];

impl Schema {
    pub fn parse(text: &str) -> Result<Self, String> {
        let doc: Value = serde_json::from_str(text).map_err(|e| format!("schema is not JSON: {e}"))?;
        Self::from_value(doc)
    }

    pub fn from_value(doc: Value) -> Result<Self, String> {
        check_schema(&doc)?;
        Ok(Self { doc })
    }

    pub fn as_value(&self) -> &Value {
        &self.doc
    }

    /// Property names declared at the top level.
    pub fn property_names(&self) -> Vec<String> {
        self.doc
            .get("properties")
            .and_then(Value::as_object)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn validate(&self, v: &Value) -> Result<(), String> {
        validate(&self.doc, v, "$")
    }
}

fn check_schema(s: &Value) -> Result<(), String> {
    let obj = s.as_object().ok_or("schema must be an object")?;
    if let Some(t) = obj.get("type") {
        let t = t.as_str().ok_or("`type` must be a string")?;
        if !KNOWN_TYPES.contains(&t) {
            return Err(format!("unknown type `{t}`"));
        }
    }
    if let Some(r) = obj.get("required") {
        let arr = r.as_array().ok_or("`required` must be an array")?;
        if !arr.iter().all(Value::is_string) {
            return Err("`required` entries must be strings".into());
        }
    }
    if let Some(p) = obj.get("properties") {
        for sub in p.as_object().ok_or("`properties` must be an object")?.values() {
            check_schema(sub)?;
        }
    }
    if let Some(i) = obj.get("items") {
        check_schema(i)?;
    }
    if let Some(a) = obj.get("additionalProperties") {
        if !a.is_boolean() {
            return Err("`additionalProperties` must be a boolean".into());
        }
    }
    if let Some(e) = obj.get("enum") {
        e.as_array().ok_or("`enum` must be an array")?;
    }
    for k in ["minimum", "maximum"] {
        if obj.get(k).is_some_and(|v| !v.is_number()) {
            return Err(format!("`{k}` must be a number"));
        }
    }
    for k in ["minLength", "maxLength"] {
        if obj.get(k).is_some_and(|v| !v.is_u64()) {
            return Err(format!("`{k}` must be a non-negative integer"));
        }
    }
    Ok(())
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn validate(s: &Value, v: &Value, path: &str) -> Result<(), String> {
    let empty = Map::new();
    let obj = s.as_object().unwrap_or(&empty);
    if let Some(t) = obj.get("type").and_then(Value::as_str) {
        if !type_matches(t, v) {
            return Err(format!("{path}: expected {t}"));
        }
    }
    if let Some(allowed) = obj.get("enum").and_then(Value::as_array) {
        if !allowed.contains(v) {
            return Err(format!("{path}: value not in enum"));
        }
    }
    if let Some(n) = v.as_f64() {
        if obj.get("minimum").and_then(Value::as_f64).is_some_and(|m| n < m) {
            return Err(format!("{path}: below minimum"));
        }
        if obj.get("maximum").and_then(Value::as_f64).is_some_and(|m| n > m) {
            return Err(format!("{path}: above maximum"));
        }
    }
    if let Some(text) = v.as_str() {
        let len = text.chars().count() as u64;
        if obj.get("minLength").and_then(Value::as_u64).is_some_and(|m| len < m) {
            return Err(format!("{path}: too short"));
        }
        if obj.get("maxLength").and_then(Value::as_u64).is_some_and(|m| len > m) {
            return Err(format!("{path}: too long"));
        }
    }
    if let Some(map) = v.as_object() {
        if let Some(req) = obj.get("required").and_then(Value::as_array) {
            for key in req.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    return Err(format!("{path}: missing `{key}`"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (k, val) in map {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => validate(sub, val, &format!("{path}.{k}"))?,
                None => {
                    if obj.get("additionalProperties") == Some(&Value::Bool(false)) {
                        return Err(format!("{path}: unexpected `{k}`"));
                    }
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (obj.get("items"), v.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            validate(items, item, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}
