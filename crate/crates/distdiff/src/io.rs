//! Delimited data files and checkpoint files.
//!
//! Data files are comma-separated UTF-8 with a mandatory header row and `.`
//! as the decimal separator. Checkpoints are JSON documents carrying a
//! `format_version` field; unknown versions are refused.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use distdiff_core::net::CHECKPOINT_VERSION;
use distdiff_core::{Dataset, Matrix, ModelCheckpoint};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{path}: {err}")]
    Csv { path: PathBuf, err: csv::Error },
    #[error("{path}: file is empty")]
    Empty { path: PathBuf },
    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadCell { path: PathBuf, row: usize, column: String, value: String },
    #[error("{path}: row {row} has {found} cells, header has {expected}")]
    Ragged { path: PathBuf, row: usize, expected: usize, found: usize },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("{path}: not a checkpoint: {err}")]
    Json { path: PathBuf, err: serde_json::Error },
    #[error("{path}: unsupported checkpoint format version {found} (this build reads version {CHECKPOINT_VERSION})")]
    Version { path: PathBuf, found: u64 },
    #[error(transparent)]
    Core(#[from] distdiff_core::Error),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |err| IoError::Io { path: path.to_path_buf(), err }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |err| IoError::Csv { path: path.to_path_buf(), err }
}

/// A numeric table read from a delimited file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a numeric delimited file. Every cell must parse as a finite
/// number; errors name the offending row (1-based, header excluded) and
/// column.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = reader.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => IoError::Ragged {
                path: path.to_path_buf(),
                row: i + 1,
                expected: *expected_len as usize,
                found: *len as usize,
            },
            _ => IoError::Csv { path: path.to_path_buf(), err: e },
        })?;
        let row = rec
            .iter()
            .zip(&header)
            .map(|(cell, col)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::BadCell {
                    path: path.to_path_buf(),
                    row: i + 1,
                    column: col.clone(),
                    value: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    Ok(Table { header, rows })
}

/// Loads a dataset. With `targets` given, those columns are the responses
/// and every other column is a feature. Otherwise columns prefixed `y_` are
/// responses and columns prefixed `c_` are features, in file order.
pub fn load_delimited(path: &Path, targets: Option<&[String]>) -> Result<Dataset> {
    let table = read_table(path)?;
    let (feat_idx, targ_idx): (Vec<usize>, Vec<usize>) = match targets {
        Some(names) if !names.is_empty() => {
            let mut t = Vec::new();
            for n in names {
                let i = table
                    .header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| IoError::MissingColumn { path: path.to_path_buf(), column: n.clone() })?;
                t.push(i);
            }
            ((0..table.header.len()).filter(|i| !t.contains(i)).collect(), t)
        }
        _ => {
            let mut f = Vec::new();
            let mut t = Vec::new();
            for (i, h) in table.header.iter().enumerate() {
                if h.starts_with("y_") {
                    t.push(i);
                } else if h.starts_with("c_") {
                    f.push(i);
                } else {
                    return Err(IoError::Layout {
                        path: path.to_path_buf(),
                        message: format!("column `{h}` has neither the `c_` nor the `y_` prefix; name the targets explicitly"),
                    });
                }
            }
            (f, t)
        }
    };
    if targ_idx.is_empty() {
        return Err(IoError::Layout { path: path.to_path_buf(), message: "no target columns".into() });
    }
    let n = table.rows.len();
    let pick = |idx: &[usize]| {
        let mut m = Matrix::zeros(n, idx.len());
        for (r, row) in table.rows.iter().enumerate() {
            for (j, &i) in idx.iter().enumerate() {
                m[(r, j)] = row[i];
            }
        }
        m
    };
    let names = |idx: &[usize]| idx.iter().map(|&i| table.header[i].clone()).collect();
    Ok(Dataset::new(pick(&feat_idx), pick(&targ_idx), names(&feat_idx), names(&targ_idx))?)
}

/// Writes a numeric table with `{:?}` formatting, which round-trips `f64`
/// exactly.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes the raw (unstandardized) columns of a dataset, features first.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let header: Vec<String> = ds.feature_names.iter().chain(&ds.target_names).cloned().collect();
    let rows = (0..ds.len()).map(|r| {
        let mut row = ds.features.row(r).to_vec();
        row.extend_from_slice(ds.targets.row(r));
        row
    });
    write_table(path, &header, rows)
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    let json = serde_json::to_vec(ckpt).map_err(|err| IoError::Json { path: path.to_path_buf(), err })?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&json).map_err(io_err(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|err| IoError::Json { path: path.to_path_buf(), err })?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| IoError::Layout {
        path: path.to_path_buf(),
        message: "checkpoint has no format_version field".into(),
    })?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(IoError::Version { path: path.to_path_buf(), found: version });
    }
    serde_json::from_value(value).map_err(|err| IoError::Json { path: path.to_path_buf(), err })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|err| IoError::Json { path: path.to_path_buf(), err })?;
    write_text(path, &(text + "\n"))
}
