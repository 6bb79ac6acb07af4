//! Binary cache of an encoded table.
//!
//! Layout, all integers and floats little-endian:
//! `"LUNETTBL1"`, u64 rows, u64 cols, cols x (u32 len, utf-8 name),
//! u64 classes, classes x (u32 len, utf-8 name), rows x u32 label,
//! u8 standardization flag (then cols x f64 mean, cols x f64 std),
//! rows x cols f64 features.

use std::fs;
use std::path::Path;

use super::encode::{DatasetTable, Standardization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TABLE_MAGIC: &[u8] = b"LUNETTBL1";

pub fn table_to_bytes(table: &DatasetTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + table.features.len() * 8);
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&(table.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(table.width() as u64).to_le_bytes());
    for name in &table.encoded_columns {
        put_str(&mut out, name);
    }
    out.extend_from_slice(&(table.num_classes() as u64).to_le_bytes());
    for name in &table.class_names {
        put_str(&mut out, name);
    }
    for &l in &table.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    match &table.standardization {
        Some(s) => {
            out.push(1);
            put_f64s(&mut out, &s.mean);
            put_f64s(&mut out, &s.std);
        }
        None => out.push(0),
    }
    put_f64s(&mut out, table.features.data());
    out
}

pub fn table_from_bytes(bytes: &[u8]) -> Result<DatasetTable> {
    let mut r = ByteReader::new(bytes);
    if r.take(TABLE_MAGIC.len())? != TABLE_MAGIC {
        return Err(Error::Format("not an encoded table (bad magic)".into()));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let columns = (0..cols).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let classes = r.u64()? as usize;
    let class_names = (0..classes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let labels = (0..rows).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    let standardization = match r.take(1)?[0] {
        0 => None,
        1 => Some(Standardization { mean: r.f64s(cols)?, std: r.f64s(cols)? }),
        f => return Err(Error::Format(format!("bad standardization flag {f}"))),
    };
    let data = r.f64s(rows * cols)?;
    r.finish()?;
    let mut table = DatasetTable::new(Tensor::from_vec(&[rows, cols], data)?, labels, columns, class_names)?;
    table.standardization = standardization;
    Ok(table)
}

pub fn write_table_cache(path: &Path, table: &DatasetTable) -> Result<()> {
    fs::write(path, table_to_bytes(table))?;
    Ok(())
}

pub fn read_table_cache(path: &Path) -> Result<DatasetTable> {
    let bytes = fs::read(path).map_err(|source| Error::Open { path: path.to_owned(), source })?;
    table_from_bytes(&bytes)
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: wanted {n} bytes at offset {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 name".into()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.at)));
        }
        Ok(())
    }
}
