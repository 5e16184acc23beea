use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::ConvergenceReport;
use crate::error::{Error, Result};
use crate::mildsolve::csv_err;

pub const CSV_HEADER: [&str; 4] = ["lambda", "sup_error", "terminal_error", "wall_ms"];

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per lambda; missing values (escaped solves, untimed runs) are
/// left empty.
pub fn write_report_csv<W: Write>(report: &ConvergenceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.records {
        w.write_record([
            r.lambda.to_string(),
            cell(r.sup_error),
            cell(r.terminal_error),
            cell(r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, to_json(value)?.as_bytes())
}

/// Writes `<dir>/<csv>` and `<dir>/<json>` and returns both paths.
pub fn emit_report(report: &ConvergenceReport, dir: &Path, csv: &str, json: &str) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(csv);
    let json_path = dir.join(json);
    let mut buf = vec![];
    write_report_csv(report, &mut buf)?;
    write_file(&csv_path, &buf)?;
    write_json(&json_path, report)?;
    Ok((csv_path, json_path))
}
