//! Shared formatting and file helpers for CSV and JSON outputs.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// 17 significant digits in scientific notation, so every f64 round-trips
/// and identical runs produce identical bytes.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Milliseconds rounded for display only.
pub fn fmt_ms(seconds: f64) -> String {
    format!("{:.3}", seconds * 1e3)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_csv(path: impl AsRef<Path>) -> Result<csv::Writer<fs::File>> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}
