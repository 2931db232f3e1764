//! Lossy pattern redaction.

use regex::{NoExpand, Regex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionRule {
    pub id: String,
    pub pattern: String,
    pub replacement: String,
}

#[derive(Debug, Clone)]
pub struct CompiledRedaction {
    pub rule: RedactionRule,
    re: Regex,
}

// Passes until no rule matches; one pass suffices unless replacements
// combine with neighbouring text into fresh matches.
const MAX_PASSES: usize = 8;

/// Compiles a rule set. Replacements are inserted literally and must not
/// themselves match any rule.
pub fn compile_redactions(rules: &[RedactionRule]) -> Result<Vec<CompiledRedaction>, String> {
    let compiled = rules
        .iter()
        .map(|r| {
            Regex::new(&r.pattern)
                .map(|re| CompiledRedaction { rule: r.clone(), re })
                .map_err(|e| format!("redaction `{}`: {e}", r.id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for r in &compiled {
        if let Some(hit) = compiled.iter().find(|o| o.re.is_match(&r.rule.replacement)) {
            return Err(format!(
                "redaction `{}`: replacement matches rule `{}`",
                r.rule.id, hit.rule.id
            ));
        }
    }
    Ok(compiled)
}

/// Replaces every match, rules applied in order so earlier rules win on
/// overlap. Returns the redacted text and the number of replacements.
pub fn redact(rules: &[CompiledRedaction], content: &str) -> (String, usize) {
    let mut text = content.to_string();
    let mut count = 0;
    for _ in 0..MAX_PASSES {
        let mut pass = 0;
        for r in rules {
            let n = r.re.find_iter(&text).count();
            if n > 0 {
                text = r.re.replace_all(&text, NoExpand(&r.rule.replacement)).into_owned();
                pass += n;
            }
        }
        count += pass;
        if pass == 0 {
            break;
        }
    }
    (text, count)
}

/// Redacts every string leaf of a document (keys are left alone).
pub fn redact_value(rules: &[CompiledRedaction], value: &Value) -> (Value, usize) {
    match value {
        Value::String(s) => {
            let (t, n) = redact(rules, s);
            (Value::String(t), n)
        }
        Value::Array(items) => {
            let mut n = 0;
            let out = items
                .iter()
                .map(|v| {
                    let (v, k) = redact_value(rules, v);
                    n += k;
                    v
                })
                .collect();
            (Value::Array(out), n)
        }
        Value::Object(map) => {
            let mut n = 0;
            let out = map
                .iter()
                .map(|(k, v)| {
                    let (v, c) = redact_value(rules, v);
                    n += c;
                    (k.clone(), v)
                })
                .collect();
            (Value::Object(out), n)
        }
        other => (other.clone(), 0),
    }
}

pub const EMAIL_PATTERN: &str = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}";
pub const ACCOUNT_PATTERN: &str = r"\b\d{3}-\d{2}-\d{4}\b";
