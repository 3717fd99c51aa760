//! Machine-readable run reports.
//!
//! Floats are written with 17 significant digits in exponent form, so a
//! report parses back to bit-identical values.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub catalog: Option<String>,
    /// Filled only on request so that repeated runs stay bit-identical.
    pub timestamp: Option<String>,
    pub status: String,
    pub tolerances: BTreeMap<String, f64>,
    pub result: Value,
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(command: &str, config: Option<&ModelConfig>) -> Self {
        RunReport {
            command: command.to_string(),
            config_hash: config.map(config_hash).unwrap_or_default(),
            catalog: config.and_then(|c| c.catalog.clone()),
            timestamp: None,
            status: "ok".into(),
            tolerances: config
                .map(|c| c.tolerances.clone())
                .unwrap_or_else(crate::config::default_tolerances),
            result: Value::Null,
            error: None,
        }
    }

    pub fn with_result<T: Serialize>(mut self, result: &T) -> Result<Self> {
        self.result = serde_json::to_value(result).map_err(|e| Error::Io(e.to_string()))?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))
    }
}

/// SHA-256 of the canonical config text, hex encoded.
pub fn config_hash(config: &ModelConfig) -> String {
    hex::encode(Sha256::digest(config.canonical().as_bytes()))
}

/// Compact JSON with floats as `{:.16e}`.
struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// CSV rows for tabular results; the first row is the header.
pub fn to_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
