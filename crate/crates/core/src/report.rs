//! Deterministic report emission.
//!
//! Floats serialize with 17 significant digits (full f64 round-trip), struct
//! fields keep declaration order, maps sort by key, and files are written
//! atomically (temp file + rename), so identical runs produce byte-identical
//! output.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

struct SigDigits17;

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: io::Write + ?Sized>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// 17 significant digits in scientific notation; valid JSON number syntax.
pub fn format_float(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        // JSON has no non-finite literals
        "null".to_string()
    }
}

/// Serialize with the 17-digit float policy.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits17);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serializer emits utf-8"))
}

/// Atomic write: the report lands complete or not at all.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Two-column CSV with the same float policy.
pub fn emit_csv(header: (&str, &str), rows: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut text = format!("{},{}\n", header.0, header.1);
    for (a, b) in rows {
        text.push_str(&format_float(*a));
        text.push(',');
        text.push_str(&format_float(*b));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Interval summary that stays valid (null bounds) on an empty ratio list.
#[derive(Clone, Debug, Serialize)]
pub struct RatioSummary {
    pub count: usize,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
}

impl RatioSummary {
    pub fn from_ratios(ratios: &[f64]) -> Self {
        if ratios.is_empty() {
            return RatioSummary { count: 0, min_ratio: None, max_ratio: None };
        }
        RatioSummary {
            count: ratios.len(),
            min_ratio: Some(ratios.iter().cloned().fold(f64::INFINITY, f64::min)),
            max_ratio: Some(ratios.iter().cloned().fold(0.0_f64, f64::max)),
        }
    }
}

/// Envelope carrying tool identity, seed, and the fully resolved config so a
/// report reproduces from its own header.
#[derive(Serialize)]
pub struct Envelope<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub report: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(seed: u64, config: serde_json::Value, report: T) -> Self {
        Envelope {
            tool: "sectlab",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            report,
        }
    }
}
