//! Structured results: a JSON envelope and CSV tables.
//!
//! JSON numbers use the shortest representation that parses back to the same
//! double. CSV floats carry 17 significant digits.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any double.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i128),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as i128)
    }
}

impl From<u32> for Cell {
    fn from(n: u32) -> Self {
        Cell::Int(n as i128)
    }
}

impl From<i64> for Cell {
    fn from(n: i64) -> Self {
        Cell::Int(n as i128)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::render).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Outcome of one subcommand.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub command: String,
    pub seed: Option<u64>,
    /// Effective settings, as recorded in the envelope and digest.
    pub config: Value,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub prediction: Option<f64>,
    pub pass: Option<bool>,
    pub value: Option<f64>,
    pub details: Value,
    pub table: Option<Table>,
    /// Human-readable lines for stdout when no table is printed.
    pub summary: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: Value) -> Self {
        Report { command: command.to_string(), config, details: Value::Null, ..Default::default() }
    }

    pub fn config_digest(&self) -> String {
        let bytes = serde_json::to_vec(&json!({ "command": self.command, "config": self.config }))
            .expect("json values serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn envelope(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config_digest": self.config_digest(),
            "config": self.config,
            "estimate": finite(self.estimate),
            "stderr": finite(self.stderr),
            "prediction": finite(self.prediction),
            "pass": self.pass,
            "value": finite(self.value),
            "details": self.details,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.envelope()).expect("json values serialize");
        s.push('\n');
        s
    }
}

fn finite(x: Option<f64>) -> Value {
    match x {
        Some(v) if v.is_finite() => json!(v),
        _ => Value::Null,
    }
}

/// Serializes with non-finite floats replaced by `null`.
pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Writes `text` to `path`, where `-` means stdout.
pub fn write_target(path: &Path, text: &str) -> std::io::Result<()> {
    if path.as_os_str() == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()
    } else {
        std::fs::write(path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["n", "x", "label"]);
        t.push(vec![Cell::from(1usize), Cell::from(0.5), Cell::from("a,b")]);
        assert_eq!(t.to_csv(), "n,x,label\n1,5.0000000000000000e-1,\"a,b\"\n");
    }

    #[test]
    fn envelope_fields_and_digest() {
        let mut r = Report::new("demo", json!({ "n": 3 }));
        r.estimate = Some(f64::NAN);
        r.pass = Some(true);
        let v = r.envelope();
        for key in ["schema_version", "version", "command", "seed", "config_digest", "estimate", "stderr", "prediction", "pass"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["estimate"].is_null());
        assert_eq!(r.config_digest(), Report::new("demo", json!({ "n": 3 })).config_digest());
        assert_ne!(r.config_digest(), Report::new("demo", json!({ "n": 4 })).config_digest());
        assert_eq!(r.config_digest().len(), 64);
    }
}
