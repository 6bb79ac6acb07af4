use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, DatasetSchema};
use crate::error::{Error, Result};

/// One feature column as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numeric(v) => v.len(),
            RawColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed rows with dropped columns already removed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    /// Feature columns in schema order.
    pub columns: Vec<(String, RawColumn)>,
    pub labels: Vec<String>,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    /// Concatenates the rows of `other` after those of `self`.
    pub fn append(&mut self, other: RawTable) -> Result<()> {
        if self.columns.len() != other.columns.len() {
            return Err(Error::Format("appending tables with different column sets".into()));
        }
        for ((name, a), (other_name, b)) in self.columns.iter_mut().zip(other.columns) {
            if *name != other_name {
                return Err(Error::Format(format!("column '{name}' does not match '{other_name}'")));
            }
            match (a, b) {
                (RawColumn::Numeric(a), RawColumn::Numeric(b)) => a.extend(b),
                (RawColumn::Categorical(a), RawColumn::Categorical(b)) => a.extend(b),
                _ => return Err(Error::Format(format!("column '{name}' changes kind"))),
            }
        }
        self.labels.extend(other.labels);
        Ok(())
    }

    /// Keeps only `rows`, in the given order.
    pub fn select(&self, rows: &[usize]) -> RawTable {
        let columns = self
            .columns
            .iter()
            .map(|(n, c)| {
                let c = match c {
                    RawColumn::Numeric(v) => RawColumn::Numeric(rows.iter().map(|&r| v[r]).collect()),
                    RawColumn::Categorical(v) => RawColumn::Categorical(rows.iter().map(|&r| v[r].clone()).collect()),
                };
                (n.clone(), c)
            })
            .collect();
        RawTable { columns, labels: rows.iter().map(|&r| self.labels[r].clone()).collect() }
    }
}

pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    let file = File::open(path).map_err(|source| Error::Open { path: path.to_owned(), source })?;
    read_csv(file, schema)
}

// A first row is a header when most of its cells are the schema's column names.
fn is_header(record: &csv::StringRecord, schema: &DatasetSchema) -> bool {
    let hits = record
        .iter()
        .zip(&schema.columns)
        .filter(|(cell, name)| cell.trim().eq_ignore_ascii_case(name))
        .count();
    hits * 2 > record.len()
}

pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<RawTable> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);

    let full = schema.columns.len();
    let min = full - schema.optional_trailing;
    let label_at = schema.columns.iter().position(|c| *c == schema.label_column).expect("label column in schema");
    let features: Vec<(usize, ColumnKind)> = schema
        .feature_columns
        .iter()
        .map(|(n, k)| (schema.columns.iter().position(|c| c == n).expect("feature column in schema"), *k))
        .collect();

    let mut columns: Vec<RawColumn> = features
        .iter()
        .map(|(_, k)| match k {
            ColumnKind::Numeric => RawColumn::Numeric(Vec::new()),
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();

    let mut record = csv::StringRecord::new();
    let mut row = 0;
    while csv.read_record(&mut record)? {
        row += 1;
        if row == 1 && is_header(&record, schema) {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < min || record.len() > full {
            return Err(Error::ColumnCount { row, expected: full, found: record.len() });
        }
        for ((at, _), column) in features.iter().zip(columns.iter_mut()) {
            let cell = &record[*at];
            match column {
                RawColumn::Numeric(v) => {
                    let x: f64 = cell.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| Error::ParseNumber {
                        row,
                        column: schema.columns[*at].clone(),
                        value: cell.to_owned(),
                    })?;
                    v.push(x);
                }
                RawColumn::Categorical(v) => v.push(cell.to_owned()),
            }
        }
        labels.push(record[label_at].to_owned());
    }
    let columns = schema.feature_columns.iter().map(|(n, _)| n.clone()).zip(columns).collect();
    Ok(RawTable { columns, labels })
}
