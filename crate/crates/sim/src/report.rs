//! CSV output. Header row, LF line ends, `.` decimals, floats in shortest
//! round-trip form so equal values always print the same bytes.

use std::path::Path;

use anyhow::{Context, Result};
use csv::{Terminator, Writer, WriterBuilder};

use crate::experiment::Row;

/// Bumped whenever the report columns change.
pub const REPORT_SCHEMA: u32 = 1;

pub const REPORT_HEADER: [&str; 10] = [
    "schema",
    "algorithm",
    "block",
    "k_users",
    "snr_db",
    "seed",
    "ewsr",
    "mean_depth",
    "flops_formula",
    "flops_measured",
];

pub const TIMINGS_HEADER: [&str; 6] = [
    "algorithm",
    "block",
    "k_users",
    "snr_db",
    "seed",
    "wall_time_s",
];

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn writer(path: &Path) -> Result<Writer<std::fs::File>> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

pub fn write_report(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            REPORT_SCHEMA.to_string(),
            r.algorithm.to_string(),
            r.block.to_string(),
            r.k_users.to_string(),
            num(r.snr_db),
            r.seed.to_string(),
            num(r.ewsr),
            num(r.mean_depth),
            num(r.flops_formula),
            r.flops_measured.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TIMINGS_HEADER)?;
    for r in rows {
        w.write_record([
            r.algorithm.to_string(),
            r.block.to_string(),
            r.k_users.to_string(),
            num(r.snr_db),
            r.seed.to_string(),
            num(r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}
