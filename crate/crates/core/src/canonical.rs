//! Canonical text forms shared by every file the engine writes.
//!
//! JSON documents are emitted with lexicographically sorted object keys and
//! every float rounded to nine significant digits, so two runs over the same
//! inputs produce identical bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Significant digits kept for every float written to disk.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Round `x` to [`SIGNIFICANT_DIGITS`] significant digits.
///
/// Non-finite values pass through unchanged.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Render a float for CSV output (rounded, shortest round-trip form).
pub fn format_float(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        // normalise -0
        return "0".to_string();
    }
    format!("{r}")
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            serde_json::Number::from_f64(round_sig(x))
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            // serde_json's default map is ordered by key; rebuild to be explicit.
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, canonicalize(v)))
                    .collect(),
            )
        }
        other => other,
    }
}

/// Serialize to canonical pretty-printed JSON, terminated by a newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
