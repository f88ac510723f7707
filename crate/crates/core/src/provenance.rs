//! Content hashes used to tie artifacts to the configuration that made them.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of a value's canonical JSON (object keys sorted), truncated to 16
/// hex digits.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes to JSON");
    let text = serde_json::to_string(&canonical).expect("JSON value serializes");
    sha256_hex(text.as_bytes())[..16].to_string()
}
