//! Delimited-text frames: one row per unit, named numeric columns.
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rejsamp_core::{FinitePopulation, Matrix};

use crate::error::{Error, Result};

/// Which header names play which role.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub x_cols: Vec<String>,
    pub z_cols: Vec<String>,
    /// `None` loads a design-only frame.
    pub y_col: Option<String>,
    /// Integer unit identifiers; row numbers are used when absent.
    pub id_col: Option<String>,
}

pub fn load_population(path: &Path, schema: &Schema, delimiter: Option<u8>) -> Result<FinitePopulation> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_population(file, schema, delimiter).map_err(|e| match e {
        Error::Csv(c) => Error::Parse { row: 0, message: format!("{}: {c}", path.display()) },
        e => e,
    })
}

/// Read a frame. Without an explicit delimiter a tab in the header line
/// selects tab-separated input, otherwise commas.
pub fn read_population<R: Read>(mut reader: R, schema: &Schema, delimiter: Option<u8>) -> Result<FinitePopulation> {
    if schema.x_cols.is_empty() {
        return Err(Error::Schema("at least one x column is required".into()));
    }
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| Error::io("<input>", e))?;
    let delimiter = delimiter.unwrap_or_else(|| {
        let header = text.lines().next().unwrap_or("");
        if header.contains('\t') { b'\t' } else { b',' }
    });
    let mut csv = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = csv.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("column {name:?} not found")))
    };
    let x_idx: Vec<usize> = schema.x_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let z_idx: Vec<usize> = schema.z_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let y_idx = schema.y_col.as_deref().map(find).transpose()?;
    let id_idx = schema.id_col.as_deref().map(find).transpose()?;

    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for (r, record) in csv.records().enumerate() {
        // 1-based data row, header excluded
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let cell = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            let name = &headers[j];
            if raw.is_empty() {
                return Err(Error::Parse { row, message: format!("column {name:?} is blank") });
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse { row, message: format!("column {name:?}: {raw:?} is not a number") })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, message: format!("column {name:?}: {raw:?} is not finite") });
            }
            Ok(v)
        };
        for &j in &x_idx {
            x.push(cell(j)?);
        }
        for &j in &z_idx {
            z.push(cell(j)?);
        }
        if let Some(j) = y_idx {
            y.push(cell(j)?);
        }
        if let Some(j) = id_idx {
            let raw = record.get(j).unwrap_or("");
            ids.push(raw.parse::<u64>().map_err(|_| Error::Parse { row, message: format!("unit id {raw:?} is not a non-negative integer") })?);
        }
    }
    let n = x.len() / x_idx.len();
    let x = Matrix::from_vec(n, x_idx.len(), x);
    let z = (!z_idx.is_empty()).then(|| Matrix::from_vec(n, z_idx.len(), z));
    let y = y_idx.map(|_| y);
    let pop = if id_idx.is_some() { FinitePopulation::with_ids(x, z, y, ids)? } else { FinitePopulation::new(x, z, y)? };
    Ok(pop)
}
