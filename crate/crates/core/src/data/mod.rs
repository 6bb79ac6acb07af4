//! Dataset ingestion: CSV parsing, one-hot encoding, standardization,
//! labelling, stratified folds and a synthetic fixture.

mod cache;
mod encode;
mod folds;
mod load;
mod schema;
mod synth;

pub use cache::{read_table_cache, table_from_bytes, table_to_bytes, write_table_cache, TABLE_MAGIC};
pub(crate) use cache::{put_f64s, put_str, ByteReader};
pub use encode::{
    build_table, encode_categorical, encode_with_columns, make_labels, standardize, DatasetTable, EncodedFeatures,
    Standardization,
};
pub use encode::from_encoded;
pub use folds::{stratified_kfold, stratified_kfold_named, stratified_subsample, FoldPlan};
pub use load::{load_csv, read_csv, RawColumn, RawTable};
pub use schema::{ColumnKind, DatasetName, DatasetSchema, Task};
pub use synth::synth_dataset;

use std::path::PathBuf;

use crate::error::{Error, Result};

/// Loads and concatenates several files of one dataset in the given order.
pub fn load_files(paths: &[PathBuf], schema: &DatasetSchema) -> Result<RawTable> {
    let (first, rest) = paths.split_first().ok_or_else(|| Error::InvalidArgument("no data files given".into()))?;
    let mut table = load_csv(first, schema)?;
    for p in rest {
        table.append(load_csv(p, schema)?)?;
    }
    Ok(table)
}
