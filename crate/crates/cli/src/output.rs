//! Serialisation with 17 significant digits, and error reporting.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

use crate::commands::CliError;

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

struct PreciseFormatter;

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        CompactFormatter.write_f32(writer, value)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value.serialize(&mut ser).map_err(|e| CliError::Io(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

/// CSV from a header and string rows.
pub fn csv_bytes(header: &[String], records: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io_err)?;
    for r in records {
        w.write_record(r).map_err(io_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

pub fn emit_error(err: &CliError) {
    let line = ErrorLine { error: err.kind(), message: err.to_string(), exit_code: err.exit_code() };
    let json = serde_json::to_string(&line).unwrap_or_else(|_| r#"{"error":"internal"}"#.to_string());
    eprintln!("{json}");
}

pub fn emit_warnings(warnings: &[String]) {
    for w in warnings {
        let json = serde_json::json!({ "warning": w });
        eprintln!("{json}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
        let json = String::from_utf8(to_json(&vec![0.1_f64]).unwrap()).unwrap();
        assert_eq!(json, "[1.0000000000000001e-1]\n");
    }
}
