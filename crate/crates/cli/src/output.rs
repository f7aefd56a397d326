//! Output assembly: 12-significant-digit number text, CSV rows, and JSON with
//! the same digit convention. Everything is byte-deterministic for identical
//! inputs.

use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// Numbers are emitted with 12 significant digits: below quadrature
/// tolerance, above float-noise visibility.
pub const SIG_DIGITS: usize = 12;

pub fn num(v: f64) -> String {
    riskloop_core::fmt_sig(v, SIG_DIGITS)
}

pub fn csv(header: &str, rows: Vec<Vec<String>>) -> String {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) => {
            // integers keep their textual form; only floats are rounded
            if !n.is_i64() && !n.is_u64() {
                if let Some(f) = n.as_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(riskloop_core::round_sig(f, SIG_DIGITS)) {
                        *n = rounded;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    round_numbers(&mut v);
    let mut text = serde_json::to_string_pretty(&v).expect("values serialize");
    text.push('\n');
    text
}

/// Write to `--out` or stdout.
pub fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure { code: 1, message: format!("cannot write {}: {e}", path.display()) }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
