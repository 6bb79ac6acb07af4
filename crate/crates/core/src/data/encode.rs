use std::collections::BTreeSet;

use super::load::{RawColumn, RawTable};
use super::schema::{DatasetSchema, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-column affine map fitted on a row subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Columns whose standard deviation falls below this map to 0.
    pub const MIN_STD: f64 = 1e-12;

    /// Mean and population standard deviation of `rows` of a `[n, w]` tensor.
    pub fn fit(features: &Tensor, rows: &[usize]) -> Result<Self> {
        let [n, w] = features.dims2("standardize")?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("standardization needs at least one fit row".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!("fit row {bad} out of range for {n} rows")));
        }
        let data = features.data();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; w];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(&data[r * w..(r + 1) * w]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; w];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(&data[r * w..(r + 1) * w]).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let [_, w] = features.dims2("standardize")?;
        if w != self.width() {
            return Err(Error::WidthMismatch { expected: self.width(), found: w });
        }
        let mut out = features.data().to_vec();
        for row in out.chunks_exact_mut(w) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = if *s < Self::MIN_STD { 0.0 } else { (*x - m) / s };
            }
        }
        Tensor::from_vec(features.shape(), out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    /// `[samples, encoded_width]`
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub encoded_columns: Vec<String>,
    pub class_names: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl DatasetTable {
    pub fn new(features: Tensor, labels: Vec<usize>, encoded_columns: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        let [n, w] = features.dims2("dataset table")?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch { op: "dataset table", detail: format!("{n} rows, {} labels", labels.len()) });
        }
        if encoded_columns.len() != w {
            return Err(Error::WidthMismatch { expected: w, found: encoded_columns.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange { label, classes: class_names.len() });
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self { features, labels, encoded_columns, class_names, standardization: None })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.encoded_columns.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Feature rows gathered in the given order as `[rows.len(), width]`.
    pub fn gather(&self, rows: &[usize]) -> Result<Tensor> {
        let w = self.width();
        let data = self.features.data();
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::InvalidArgument(format!("row {r} out of range for {} rows", self.rows())));
            }
            out.extend_from_slice(&data[r * w..(r + 1) * w]);
        }
        Tensor::from_vec(&[rows.len(), w], out)
    }

    /// The listed rows as a new table, keeping columns, classes and any
    /// stored standardization.
    pub fn select(&self, rows: &[usize]) -> Result<DatasetTable> {
        Ok(DatasetTable { features: self.gather(rows)?, labels: self.gather_labels(rows), ..self.clone() })
    }

    pub fn gather_labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Numeric features with categorical columns expanded into indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    pub columns: Vec<String>,
    /// Row-major `[rows, columns.len()]`.
    pub data: Vec<f64>,
    pub rows: usize,
}

fn indicator_name(column: &str, value: &str) -> String {
    format!("{column}={value}")
}

/// One-hot expansion of every categorical column in place, one indicator per
/// distinct value in byte-wise lexicographic order.
pub fn encode_categorical(raw: &RawTable) -> Result<EncodedFeatures> {
    let rows = raw.rows();
    let mut blocks: Vec<(Vec<String>, Vec<Vec<f64>>)> = Vec::with_capacity(raw.columns.len());
    for (name, column) in &raw.columns {
        match column {
            RawColumn::Numeric(v) => blocks.push((vec![name.clone()], vec![v.clone()])),
            RawColumn::Categorical(v) => {
                let vocab: Vec<&str> = v.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
                if vocab.is_empty() {
                    return Err(Error::EmptyCategorical(name.clone()));
                }
                let mut indicators = vec![vec![0.0; rows]; vocab.len()];
                for (r, value) in v.iter().enumerate() {
                    let j = vocab.binary_search(&value.as_str()).unwrap();
                    indicators[j][r] = 1.0;
                }
                blocks.push((vocab.iter().map(|value| indicator_name(name, value)).collect(), indicators));
            }
        }
    }
    Ok(interleave(blocks, rows))
}

fn interleave(blocks: Vec<(Vec<String>, Vec<Vec<f64>>)>, rows: usize) -> EncodedFeatures {
    let mut columns = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (names, values) in blocks {
        columns.extend(names);
        cols.extend(values);
    }
    let mut data = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        data.extend(cols.iter().map(|c| c[r]));
    }
    EncodedFeatures { columns, data, rows }
}

/// Encodes `raw` onto a previously fixed column list, as stored with a
/// trained model. Categorical values missing from `columns` encode as all
/// zeros. Fails with a width mismatch when `columns` does not describe this
/// schema's features.
pub fn encode_with_columns(raw: &RawTable, columns: &[String]) -> Result<EncodedFeatures> {
    let rows = raw.rows();
    let mismatch = || {
        let found = encode_categorical(raw).map(|e| e.columns.len()).unwrap_or(raw.columns.len());
        Error::WidthMismatch { expected: columns.len(), found }
    };
    let mut data = vec![0.0; rows * columns.len()];
    let w = columns.len();
    for (j, target) in columns.iter().enumerate() {
        let (source, value) = match raw.columns.iter().find(|(n, _)| n == target) {
            Some((_, c)) => (c, None),
            None => {
                let (name, value) = target.split_once('=').ok_or_else(mismatch)?;
                let (_, c) = raw.columns.iter().find(|(n, _)| n == name).ok_or_else(mismatch)?;
                (c, Some(value))
            }
        };
        match (source, value) {
            (RawColumn::Numeric(v), None) => {
                for (r, x) in v.iter().enumerate() {
                    data[r * w + j] = *x;
                }
            }
            (RawColumn::Categorical(v), Some(value)) => {
                for (r, x) in v.iter().enumerate() {
                    if x == value {
                        data[r * w + j] = 1.0;
                    }
                }
            }
            _ => return Err(mismatch()),
        }
    }
    Ok(EncodedFeatures { columns: columns.to_vec(), data, rows })
}

/// Class index per row plus the class vocabulary. Binary tasks use
/// `[normal, attack]`.
pub fn make_labels(raw: &RawTable, schema: &DatasetSchema, task: Task) -> Result<(Vec<usize>, Vec<String>)> {
    let multi: Vec<usize> = raw.labels.iter().map(|l| schema.class_of(l)).collect::<Result<_>>()?;
    Ok(match task {
        Task::Multi => (multi, schema.classes.clone()),
        Task::Binary => (multi.into_iter().map(|c| usize::from(c != 0)).collect(), vec!["normal".into(), "attack".into()]),
    })
}

/// Encoded, labelled, not yet standardized table.
pub fn build_table(raw: &RawTable, schema: &DatasetSchema, task: Task) -> Result<DatasetTable> {
    let encoded = encode_categorical(raw)?;
    let (labels, class_names) = make_labels(raw, schema, task)?;
    from_encoded(encoded, labels, class_names)
}

/// Wraps encoded features and labels as an unstandardized table.
pub fn from_encoded(encoded: EncodedFeatures, labels: Vec<usize>, class_names: Vec<String>) -> Result<DatasetTable> {
    if encoded.rows == 0 {
        return Err(Error::Format("dataset has no rows".into()));
    }
    let features = Tensor::from_vec(&[encoded.rows, encoded.columns.len()], encoded.data)?;
    DatasetTable::new(features, labels, encoded.columns, class_names)
}

/// Standardizes every row with statistics fitted on `fit_rows` only.
pub fn standardize(table: &DatasetTable, fit_rows: &[usize]) -> Result<DatasetTable> {
    let stats = Standardization::fit(&table.features, fit_rows)?;
    let features = stats.apply(&table.features)?;
    Ok(DatasetTable { features, standardization: Some(stats), ..table.clone() })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn raw(protocols: &[&str], numbers: &[f64]) -> RawTable {
        RawTable {
            columns: vec![
                ("n".into(), RawColumn::Numeric(numbers.to_vec())),
                ("protocol".into(), RawColumn::Categorical(protocols.iter().map(|s| s.to_string()).collect())),
            ],
            labels: vec!["normal".into(); protocols.len()],
        }
    }

    #[test]
    fn lexicographic_indicators() {
        let e = encode_categorical(&raw(&["tcp", "udp", "icmp"], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(e.columns, ["n", "protocol=icmp", "protocol=tcp", "protocol=udp"]);
        assert_eq!(&e.data[..4], &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_value_column_is_all_ones() {
        let e = encode_categorical(&raw(&["tcp", "tcp"], &[0.0, 0.0])).unwrap();
        assert_eq!(e.columns.len(), 2);
        assert_eq!(e.data, [0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_categorical_rejected() {
        assert!(matches!(encode_categorical(&raw(&[], &[])), Err(Error::EmptyCategorical(c)) if c == "protocol"));
    }

    #[test]
    fn aligned_encoding_zeros_unknown_values() {
        let columns: Vec<String> = ["protocol=tcp", "n", "protocol=udp"].map(String::from).to_vec();
        let e = encode_with_columns(&raw(&["udp", "icmp"], &[5.0, 6.0]), &columns).unwrap();
        assert_eq!(e.data, [0.0, 5.0, 1.0, 0.0, 6.0, 0.0]);
        let bad: Vec<String> = vec!["f0".into()];
        assert!(matches!(
            encode_with_columns(&raw(&["udp"], &[1.0]), &bad),
            Err(Error::WidthMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn standardize_uses_population_std() {
        let t = DatasetTable::new(
            Tensor::from_vec(&[3, 2], vec![2.0, 7.0, 4.0, 7.0, 6.0, 7.0]).unwrap(),
            vec![0, 0, 1],
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let s = standardize(&t, &[0, 1, 2]).unwrap();
        let d = s.features.data();
        assert!((d[0] + 1.2247).abs() < 1e-4 && d[2] == 0.0 && (d[4] - 1.2247).abs() < 1e-4);
        assert_eq!([d[1], d[3], d[5]], [0.0; 3]);
    }

    #[test]
    fn validation_rows_use_fit_statistics() {
        let t = DatasetTable::new(
            Tensor::from_vec(&[3, 1], vec![0.0, 2.0, 100.0]).unwrap(),
            vec![0, 0, 0],
            vec!["a".into()],
            vec!["x".into()],
        )
        .unwrap();
        let s = standardize(&t, &[0, 1]).unwrap();
        assert_eq!(s.features.data(), &[-1.0, 1.0, 99.0]);
        assert_eq!(s.standardization.unwrap().mean, [1.0]);
    }

    #[test]
    fn labels_for_both_tasks() {
        let schema = DatasetSchema::nsl_kdd();
        let mut t = raw(&["tcp", "tcp", "tcp"], &[0.0; 3]);
        t.labels = vec!["neptune".into(), "normal".into(), "rootkit".into()];
        let (bin, names) = make_labels(&t, &schema, Task::Binary).unwrap();
        assert_eq!((bin, names.len()), (vec![1, 0, 1], 2));
        let (multi, names) = make_labels(&t, &schema, Task::Multi).unwrap();
        assert_eq!(multi, [1, 0, 4]);
        assert_eq!(names[multi[0]], "DoS");
        t.labels[0] = "xyz".into();
        assert!(matches!(make_labels(&t, &schema, Task::Multi), Err(Error::UnknownLabel(v)) if v == "xyz"));
    }

    proptest! {
        #[test]
        fn indicator_groups_partition_unity(values in prop::collection::vec(0u8..6, 1..40)) {
            let cats: Vec<String> = values.iter().map(|v| format!("v{v}")).collect();
            let numbers: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let r = RawTable {
                columns: vec![
                    ("a".into(), RawColumn::Categorical(cats.clone())),
                    ("n".into(), RawColumn::Numeric(numbers)),
                    ("b".into(), RawColumn::Categorical(cats.iter().rev().cloned().collect())),
                ],
                labels: vec![String::new(); cats.len()],
            };
            let e = encode_categorical(&r).unwrap();
            let distinct = values.iter().collect::<BTreeSet<_>>().len();
            let w = e.columns.len();
            prop_assert_eq!(w, 1 + 2 * distinct);
            for row in e.data.chunks_exact(w) {
                let a: f64 = row[..distinct].iter().sum();
                let b: f64 = row[distinct + 1..].iter().sum();
                prop_assert_eq!(a, 1.0);
                prop_assert_eq!(b, 1.0);
            }
        }

        #[test]
        fn standardized_fit_rows_have_zero_mean_unit_std(
            data in prop::collection::vec(-1e3f64..1e3, 30..90),
            split in 0.3f64..0.9,
        ) {
            let rows = data.len() / 3;
            let t = DatasetTable::new(
                Tensor::from_vec(&[rows, 3], data[..rows * 3].to_vec()).unwrap(),
                vec![0; rows],
                vec!["a".into(), "b".into(), "c".into()],
                vec!["x".into()],
            ).unwrap();
            let fit: Vec<usize> = (0..((rows as f64 * split) as usize).max(2)).collect();
            let s = standardize(&t, &fit).unwrap();
            let stats = s.standardization.as_ref().unwrap();
            for c in 0..3 {
                let col: Vec<f64> = fit.iter().map(|&r| s.features.data()[r * 3 + c]).collect();
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let std = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-10);
                if stats.std[c] >= Standardization::MIN_STD {
                    prop_assert!((std - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
