//! Fixed-decimal number formatting and the JSON / CSV sinks.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use serde_json::{Number, Value};

/// Significant digits carried by every emitted number.
pub const SIG_DIGITS: i32 = 12;

/// Fixed decimal (never exponent) notation with at least `SIG_DIGITS`
/// significant digits.
pub fn fixed(x: f64) -> String {
    if x == 0.0 {
        return format!("{:.*}", (SIG_DIGITS - 1) as usize, 0.0);
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (SIG_DIGITS - 1 - mag).max(1) as usize;
    format!("{x:.decimals$}")
}

/// JSON number in fixed notation; non-finite values become null.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(Number::from_str(&fixed(x)).expect("fixed notation is valid JSON"))
}

pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_csv(
    path: Option<&Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fixed(*v)))?;
    }
    w.flush()?;
    Ok(())
}
