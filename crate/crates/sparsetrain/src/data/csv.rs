//! Comma-separated ingestion: decimal-point reals, optional header, one
//! label column mapped to dense 0-based indices in first-seen order.

use std::path::Path;

use crate::data::RawData;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<RawData> {
    parse(path.as_ref(), label_column, has_header, None)
}

/// Loads with a fixed label mapping (e.g. the one recorded from the
/// training file); a label absent from the mapping is a data error.
pub fn load_csv_with_mapping(
    path: impl AsRef<Path>,
    label_column: usize,
    has_header: bool,
    mapping: &[String],
) -> Result<RawData> {
    parse(path.as_ref(), label_column, has_header, Some(mapping))
}

fn parse(path: &Path, label_column: usize, has_header: bool, mapping: Option<&[String]>) -> Result<RawData> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut names: Vec<String> = mapping.map(|m| m.to_vec()).unwrap_or_default();
    let fixed_mapping = mapping.is_some();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut width: Option<usize> = None;

    for (line_no, line) in text.lines().enumerate() {
        let row_no = line_no + 1;
        if line_no == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => {
                if label_column >= fields.len() {
                    return Err(Error::Data(format!(
                        "row {row_no}: label column {label_column} out of range for {} fields",
                        fields.len()
                    )));
                }
                width = Some(fields.len());
            }
            Some(w) if w != fields.len() => {
                return Err(Error::Data(format!(
                    "row {row_no}: expected {w} fields, got {}",
                    fields.len()
                )));
            }
            _ => {}
        }
        let mut feats = Vec::with_capacity(fields.len() - 1);
        for (col, field) in fields.iter().enumerate() {
            if col == label_column {
                let key = field.to_string();
                let idx = match names.iter().position(|n| n == &key) {
                    Some(i) => i,
                    None if fixed_mapping => {
                        return Err(Error::Data(format!(
                            "row {row_no}: label {key:?} not present in training mapping"
                        )));
                    }
                    None => {
                        names.push(key);
                        names.len() - 1
                    }
                };
                labels.push(idx as u32);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!("row {row_no}: non-numeric feature {field:?} in column {col}"))
                })?;
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let class_count = names.len();
    Ok(RawData {
        features: DenseMatrix::from_rows(&rows),
        labels,
        class_count,
        label_names: names,
    })
}
