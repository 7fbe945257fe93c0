//! Deterministic CSV and JSON emission of numeric result tables.
//!
//! Floats are written in Rust's shortest round-trip form (`{:?}`), lines end
//! in LF, and every file starts with the manifest hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Free-form unit label; empty for dimensionless columns.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn table_error(message: impl Into<String>) -> IoError {
    IoError::Table(message.into())
}

fn check_label(s: &str) -> Result<(), IoError> {
    if s.contains([',', '\n', '\r', '#']) {
        Err(table_error(format!("label {s:?} may not contain ',', '#' or line breaks")))
    } else {
        Ok(())
    }
}

impl ResultTable {
    /// Columns from `(name, unit)` pairs; names must be unique and non-empty.
    pub fn new<S: AsRef<str>>(columns: &[(S, S)]) -> Result<Self, IoError> {
        let mut out = Vec::with_capacity(columns.len());
        for (name, unit) in columns {
            let (name, unit) = (name.as_ref(), unit.as_ref());
            if name.is_empty() {
                return Err(table_error("column names must be non-empty"));
            }
            check_label(name)?;
            check_label(unit)?;
            if out.iter().any(|c: &Column| c.name == name) {
                return Err(table_error(format!("duplicate column {name:?}")));
            }
            out.push(Column {
                name: name.to_string(),
                unit: unit.to_string(),
            });
        }
        Ok(ResultTable {
            columns: out,
            rows: Vec::new(),
        })
    }

    /// Dimensionless columns.
    pub fn unitless<S: AsRef<str>>(names: &[S]) -> Result<Self, IoError> {
        let pairs: Vec<(&str, &str)> = names.iter().map(|n| (n.as_ref(), "")).collect();
        ResultTable::new(&pairs)
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<(), IoError> {
        if row.len() != self.columns.len() {
            return Err(table_error(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self, manifest_hash: u64) -> String {
        let mut out = format!("# manifest {manifest_hash:016x}\n# units ");
        let units: Vec<&str> = self.columns.iter().map(|c| c.unit.as_str()).collect();
        out.push_str(&units.join(","));
        out.push('\n');
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for row in &self.rows {
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{x:?}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`ResultTable::to_csv`]; returns the manifest hash too.
    pub fn from_csv(text: &str) -> Result<(u64, ResultTable), IoError> {
        let mut lines = text.split('\n');
        let hash = lines
            .next()
            .and_then(|l| l.strip_prefix("# manifest "))
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| table_error("missing manifest header"))?;
        let units = lines
            .next()
            .and_then(|l| l.strip_prefix("# units "))
            .ok_or_else(|| table_error("missing units header"))?;
        let names = lines.next().ok_or_else(|| table_error("missing column header"))?;
        let names: Vec<&str> = if names.is_empty() { Vec::new() } else { names.split(',').collect() };
        let units: Vec<&str> = if names.is_empty() { Vec::new() } else { units.split(',').collect() };
        if units.len() != names.len() {
            return Err(table_error("units and column headers differ in length"));
        }
        let pairs: Vec<(&str, &str)> = names.into_iter().zip(units).collect();
        let mut table = ResultTable::new(&pairs)?;
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| table_error(format!("row {k}: {cell:?} is not a number")))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            table.push(row)?;
        }
        Ok((hash, table))
    }

    /// Non-finite cells are written as `null` and read back as NaN.
    pub fn to_json(&self, manifest_hash: u64) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            manifest: String,
            columns: &'a [Column],
            rows: &'a [Vec<f64>],
        }
        let doc = Doc {
            manifest: format!("{manifest_hash:016x}"),
            columns: &self.columns,
            rows: &self.rows,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<(u64, ResultTable), IoError> {
        #[derive(Deserialize)]
        struct Doc {
            manifest: String,
            columns: Vec<Column>,
            rows: Vec<Vec<Value>>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| table_error(e.to_string()))?;
        let hash = u64::from_str_radix(&doc.manifest, 16).map_err(|e| table_error(e.to_string()))?;
        let pairs: Vec<(&str, &str)> = doc
            .columns
            .iter()
            .map(|c| (c.name.as_str(), c.unit.as_str()))
            .collect();
        let mut table = ResultTable::new(&pairs)?;
        for row in doc.rows {
            let row = row
                .iter()
                .map(|v| match v {
                    Value::Null => Ok(f64::NAN),
                    other => other.as_f64().ok_or_else(|| table_error(format!("{other} is not a number"))),
                })
                .collect::<Result<Vec<f64>, _>>()?;
            table.push(row)?;
        }
        Ok((hash, table))
    }
}

pub(super) fn write_file(path: &Path, contents: &str) -> Result<PathBuf, IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

/// Writes `table` to `stem` plus the format's extension.
pub fn emit_results(table: &ResultTable, format: Format, manifest_hash: u64, stem: &Path) -> Result<PathBuf, IoError> {
    let path = stem.with_extension(format.extension());
    let text = match format {
        Format::Csv => table.to_csv(manifest_hash),
        Format::Json => table.to_json(manifest_hash),
    };
    write_file(&path, &text)
}
