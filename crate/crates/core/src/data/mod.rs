//! Dataset loading, saving, normalization, synthetic planted-model data,
//! and checkpoint persistence.
//!
//! On-disk layout of a dataset directory:
//!
//! - `<id>.csv` - observation rows, one frame per line, comma-separated
//!   float64, no header
//! - `<id>.y.csv` - optional side-information rows, same length as the
//!   observations
//! - `labels.csv` - optional window labels, rows of
//!   `sequence_id,start_frame,style_index`
//!
//! Loading is deterministic: records are ordered by id, and every parse
//! error names the file and line it came from.

mod checkpoint;
mod normalize;
mod plant;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use normalize::{denormalize, normalize, NormStats};
pub use plant::{plant_model, PlantConfig};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dims::ObsKind;
use crate::error::{Error, Result};

/// One labeled window: the style that applies starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelWindow {
    pub start: usize,
    pub style: usize,
}

/// One sequence with optional side information and window labels.
#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub id: String,
    pub v: Array2<f64>,
    pub y: Option<Array2<f64>>,
    pub labels: Vec<LabelWindow>,
}

/// An id-ordered collection of sequences of one observation kind.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    pub obs: ObsKind,
    pub records: Vec<SequenceRecord>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Visible dimension, if any sequence is present.
    pub fn visible_dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.v.ncols())
    }

    /// Side-information dimension, if any sequence carries one.
    pub fn style_dim(&self) -> Option<usize> {
        self.records.iter().find_map(|r| r.y.as_ref().map(|y| y.ncols()))
    }

    pub fn total_frames(&self) -> usize {
        self.records.iter().map(|r| r.v.nrows()).sum()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::io(path.display().to_string(), source)
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), msg.into())
}

/// Parse one numeric CSV file into a row-major matrix. Rejects ragged
/// rows, empty files with rows of zero width, and non-finite values,
/// naming the line.
fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| fmt_err(path, format!("line {line}: {e}")))?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let value: f64 = field
                .parse()
                .map_err(|_| fmt_err(path, format!("line {line}: '{field}' is not a float")))?;
            if !value.is_finite() {
                return Err(fmt_err(path, format!("line {line}: non-finite value {value}")));
            }
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(fmt_err(
                    path,
                    format!("line {line}: {} columns where {} expected", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(fmt_err(path, "no rows"));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / ncols;
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| fmt_err(path, format!("shape error: {e}")))
}

fn validate_obs(path: &Path, v: &Array2<f64>, obs: ObsKind) -> Result<()> {
    match obs {
        ObsKind::Real => Ok(()),
        ObsKind::Binary => {
            for (t, row) in v.rows().into_iter().enumerate() {
                if row.iter().any(|&x| x != 0.0 && x != 1.0) {
                    return Err(fmt_err(path, format!("line {}: binary data must be 0/1", t + 1)));
                }
            }
            Ok(())
        }
        ObsKind::Count => {
            for (t, row) in v.rows().into_iter().enumerate() {
                if row.iter().any(|&x| x < 0.0 || x.fract() != 0.0) {
                    return Err(fmt_err(
                        path,
                        format!("line {}: count data must be nonnegative integers", t + 1),
                    ));
                }
            }
            Ok(())
        }
    }
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<LabelWindow>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    let mut out: BTreeMap<String, Vec<LabelWindow>> = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| fmt_err(path, format!("line {line}: {e}")))?;
        if record.len() != 3 {
            return Err(fmt_err(
                path,
                format!("line {line}: expected 'id,start_frame,style_index'"),
            ));
        }
        let id = record[0].to_string();
        let start: usize = record[1]
            .parse()
            .map_err(|_| fmt_err(path, format!("line {line}: bad start_frame '{}'", &record[1])))?;
        let style: usize = record[2]
            .parse()
            .map_err(|_| fmt_err(path, format!("line {line}: bad style_index '{}'", &record[2])))?;
        out.entry(id).or_default().push(LabelWindow { start, style });
    }
    Ok(out)
}

/// Load every sequence in a directory. Missing directory contents are an
/// error only when individual files are malformed; an empty directory is
/// an empty dataset.
pub fn load_dataset(dir: &Path, obs: ObsKind) -> Result<SequenceDataset> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut obs_paths: Vec<PathBuf> = Vec::new();
    let mut labels_path: Option<PathBuf> = None;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_string(),
            None => continue,
        };
        if name == "labels.csv" {
            labels_path = Some(path);
        } else if name.ends_with(".y.csv") {
            // paired below
        } else if name.ends_with(".csv") {
            obs_paths.push(path);
        }
    }
    obs_paths.sort();

    let mut labels = match &labels_path {
        Some(p) => read_labels(p)?,
        None => BTreeMap::new(),
    };

    let mut records = Vec::with_capacity(obs_paths.len());
    for path in obs_paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| fmt_err(&path, "unreadable file name"))?
            .to_string();
        let v = read_matrix(&path)?;
        validate_obs(&path, &v, obs)?;
        let y_path = path.with_file_name(format!("{id}.y.csv"));
        let y = if y_path.exists() {
            let y = read_matrix(&y_path)?;
            if y.nrows() != v.nrows() {
                return Err(fmt_err(
                    &y_path,
                    format!("{} side-info rows for {} frames", y.nrows(), v.nrows()),
                ));
            }
            Some(y)
        } else {
            None
        };
        let mut windows = labels.remove(&id).unwrap_or_default();
        windows.sort_by_key(|w| w.start);
        for w in &windows {
            if w.start >= v.nrows() {
                return Err(fmt_err(
                    labels_path.as_deref().unwrap_or(&path),
                    format!("label window at frame {} beyond sequence '{id}' length {}", w.start, v.nrows()),
                ));
            }
        }
        records.push(SequenceRecord { id, v, y, labels: windows });
    }
    if let Some(stray) = labels.keys().next() {
        return Err(fmt_err(
            labels_path.as_deref().unwrap_or(dir),
            format!("labels reference unknown sequence '{stray}'"),
        ));
    }

    // Cross-sequence dimension agreement.
    if let Some(first) = records.first() {
        let m = first.v.ncols();
        let s = records.iter().find_map(|r| r.y.as_ref().map(|y| y.ncols()));
        for r in &records {
            if r.v.ncols() != m {
                return Err(Error::shape(format!(
                    "sequence '{}' has {} dims where '{}' has {m}",
                    r.id,
                    r.v.ncols(),
                    first.id
                )));
            }
            if let (Some(y), Some(s)) = (&r.y, s) {
                if y.ncols() != s {
                    return Err(Error::shape(format!(
                        "sequence '{}' side info has {} dims, expected {s}",
                        r.id,
                        y.ncols()
                    )));
                }
            }
        }
    }
    Ok(SequenceDataset { obs, records })
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    // Rust's float Display is shortest-round-trip, so text CSVs preserve
    // exact bit patterns through save/load.
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write a dataset into a directory using the loadable layout.
pub fn save_dataset(dir: &Path, dataset: &SequenceDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut label_lines = String::new();
    for r in &dataset.records {
        write_matrix(&dir.join(format!("{}.csv", r.id)), &r.v)?;
        if let Some(y) = &r.y {
            write_matrix(&dir.join(format!("{}.y.csv", r.id)), y)?;
        }
        for w in &r.labels {
            label_lines.push_str(&format!("{},{},{}\n", r.id, w.start, w.style));
        }
    }
    if !label_lines.is_empty() {
        let path = dir.join("labels.csv");
        fs::write(&path, label_lines).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
