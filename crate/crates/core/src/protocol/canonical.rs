//! Canonical JSON: object keys sorted, confidences rounded to 6 significant
//! digits, every other float rounded to 4 decimals.

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Number, Value};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at `{key}`: {detail}")]
    SchemaViolation { key: String, detail: String },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl CodecError {
    /// Key named by a schema violation.
    pub fn key(&self) -> Option<&str> {
        match self {
            CodecError::SchemaViolation { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn is_confidence_key(key: &str) -> bool {
    key.contains("confidence") || key == "weight" || key.starts_with("weight")
}

pub fn round_decimals(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

fn canonical_number(n: &Number, confidence: bool) -> Value {
    if n.is_i64() || n.is_u64() {
        return Value::Number(n.clone());
    }
    let x = n.as_f64().unwrap_or(0.0);
    let r = if confidence {
        round_significant(x, 6)
    } else {
        round_decimals(x, 4)
    };
    Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
}

fn canonicalize_inner(v: Value, confidence: bool) -> Value {
    match v {
        Value::Number(n) => canonical_number(&n, confidence),
        Value::Array(items) => Value::Array(
            items
                .into_iter()
                .map(|i| canonicalize_inner(i, confidence))
                .collect(),
        ),
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let c = is_confidence_key(&k);
                    (k, canonicalize_inner(v, c))
                })
                .collect(),
        ),
        other => other,
    }
}

/// Applies the canonical number rules. serde_json's map is ordered, so
/// keys come out sorted.
pub fn canonicalize(v: Value) -> Value {
    canonicalize_inner(v, false)
}

pub fn to_canonical_value<T: Serialize>(x: &T) -> Result<Value, CodecError> {
    serde_json::to_value(x)
        .map(canonicalize)
        .map_err(|e| CodecError::Serialize(e.to_string()))
}

/// Compact canonical bytes.
pub fn encode<T: Serialize>(x: &T) -> Result<Vec<u8>, CodecError> {
    let v = to_canonical_value(x)?;
    serde_json::to_vec(&v).map_err(|e| CodecError::Serialize(e.to_string()))
}

/// Pretty-printed canonical text (same key order and rounding).
pub fn encode_pretty<T: Serialize>(x: &T) -> Result<String, CodecError> {
    let v = to_canonical_value(x)?;
    serde_json::to_string_pretty(&v).map_err(|e| CodecError::Serialize(e.to_string()))
}

fn missing_field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"`([^`]+)`").expect("static regex"))
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| CodecError::MalformedDocument(e.to_string()))?;
    decode_value(value)
}

pub fn decode_value<T: DeserializeOwned>(value: Value) -> Result<T, CodecError> {
    serde_json::from_value(value).map_err(|e| {
        let detail = e.to_string();
        let key = missing_field_re()
            .captures(&detail)
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| "<root>".to_string());
        CodecError::SchemaViolation { key, detail }
    })
}
