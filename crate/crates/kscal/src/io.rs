//! Data, trace and JSON files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use kscal_core::CalibrationResult;

use crate::error::{Error, Result};

/// Reads observations from a headerless CSV with `dim` numeric columns per
/// row. Lines starting with `#` are ignored.
pub fn read_data_csv(path: &Path, dim: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        let row = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.len() != dim {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row,
                message: format!("expected {dim} column(s), found {}", record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Data {
                path: path.to_path_buf(),
                row,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data { path: path.to_path_buf(), row, message: "non-finite value".into() });
            }
            out.push(v);
        }
    }
    if out.len() < 2 * dim {
        return Err(Error::Data { path: path.to_path_buf(), row: 0, message: "need at least two observations".into() });
    }
    Ok(out)
}

pub fn write_data_csv(path: &Path, values: &[f64], dim: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in values.chunks(dim) {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    }
    flush(w, path)
}

/// `iteration, score, theta_<name>...`; iterates are recorded after each
/// update.
pub fn write_trace_csv(path: &Path, result: &CalibrationResult, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["iteration".to_string(), "score".to_string()];
    if result.theta_trace.is_some() {
        header.extend(names.iter().map(|n| format!("theta_{n}")));
    }
    w.write_record(&header).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    for (t, score) in result.score_trace.iter().enumerate() {
        let mut row = vec![t.to_string(), score.to_string()];
        if let Some(trace) = &result.theta_trace {
            row.extend(trace[t].iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    }
    flush(w, path)
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

pub(crate) fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
