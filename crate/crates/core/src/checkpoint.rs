//! Trained-model files.
//!
//! Layout (little-endian): `"LUNET1"`, u32 version, u32 count of `key=value`
//! string pairs (the architecture plus `run.dataset` / `run.task`), u32 count
//! of encoded column names, u32 count of class names, u64 width then width x
//! f64 means and width x f64 standard deviations, u32 tensor count and per
//! tensor: name, u32 rank, rank x u64 dims, row-major f64 values. Strings are
//! u32 byte length plus utf-8. Batch-norm running statistics are stored as
//! tensors next to the parameters.

use std::fs;
use std::path::Path;

use crate::data::{put_f64s, put_str, ByteReader, DatasetTable, Standardization, Task};
use crate::error::{Error, Result};
use crate::model::{LuNetModel, LuNetSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"LUNET1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: LuNetSpec,
    pub dataset: String,
    pub task: Task,
    pub encoded_columns: Vec<String>,
    pub class_names: Vec<String>,
    pub standardization: Standardization,
    pub tensors: Vec<(String, Tensor)>,
}

fn tensor_names(model: &LuNetModel) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        for p in layer.params().iter() {
            out.push((format!("layer{i}.{}.{}", layer.kind(), p.name()), p.value.clone()));
        }
        for (name, t) in layer.buffers() {
            out.push((format!("layer{i}.{}.{name}", layer.kind()), t.clone()));
        }
    }
    out
}

impl Checkpoint {
    /// Snapshot of `model` plus the encoding it was trained on. The table must
    /// carry the standardization that was applied to its training rows.
    pub fn capture(model: &LuNetModel, dataset: &str, task: Task, table: &DatasetTable) -> Result<Self> {
        let standardization = table
            .standardization
            .clone()
            .ok_or_else(|| Error::InvalidArgument("checkpoint needs a standardized table".into()))?;
        Ok(Self {
            spec: model.spec().clone(),
            dataset: dataset.to_owned(),
            task,
            encoded_columns: table.encoded_columns.clone(),
            class_names: table.class_names.clone(),
            standardization,
            tensors: tensor_names(model),
        })
    }

    /// Rebuilds the model and loads every stored tensor into it.
    pub fn restore(&self) -> Result<LuNetModel> {
        let mut model = LuNetModel::build(&self.spec)?;
        let expected = tensor_names(&model);
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        let mut stored = self.tensors.iter();
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            let prefix = format!("layer{i}.{}.", layer.kind());
            let names: Vec<String> = layer.params().iter().map(|p| p.name().to_owned()).collect();
            for name in names {
                let (stored_name, t) = stored.next().unwrap();
                check_name(stored_name, &prefix, &name)?;
                layer.params_mut().set_value(&name, t.clone())?;
            }
            for (name, slot) in layer.buffers_mut() {
                let (stored_name, t) = stored.next().unwrap();
                check_name(stored_name, &prefix, name)?;
                if slot.shape() != t.shape() {
                    return Err(Error::Format(format!("{stored_name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut pairs = self.spec.to_pairs();
        pairs.push(("run.dataset".into(), self.dataset.clone()));
        pairs.push(("run.task".into(), self.task.to_string()));
        out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
        for (k, v) in &pairs {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        for list in [&self.encoded_columns, &self.class_names] {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for s in list {
                put_str(&mut out, s);
            }
        }
        out.extend_from_slice(&(self.standardization.width() as u64).to_le_bytes());
        put_f64s(&mut out, &self.standardization.mean);
        put_f64s(&mut out, &self.standardization.std);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a LuNet checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut spec = LuNetSpec::default();
        let mut dataset = None;
        let mut task = None;
        for _ in 0..r.u32()? {
            let (k, v) = (r.string()?, r.string()?);
            match k.as_str() {
                "run.dataset" => dataset = Some(v),
                "run.task" => task = Some(v.parse::<Task>()?),
                _ => {
                    if !spec.set_pair(&k, &v)? {
                        return Err(Error::Format(format!("unknown checkpoint key '{k}'")));
                    }
                }
            }
        }
        let mut lists = [Vec::new(), Vec::new()];
        for list in &mut lists {
            for _ in 0..r.u32()? {
                list.push(r.string()?);
            }
        }
        let [encoded_columns, class_names] = lists;
        let width = r.u64()? as usize;
        let standardization = Standardization { mean: r.f64s(width)?, std: r.f64s(width)? };
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if !(1..=3).contains(&rank) {
                return Err(Error::Format(format!("{name}: rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
            tensors.push((name, Tensor::from_vec(&dims, r.f64s(len)?)?));
        }
        r.finish()?;
        if encoded_columns.len() != spec.input_features || width != spec.input_features {
            return Err(Error::Format(format!(
                "checkpoint stores {} columns and {width} statistics for {} input features",
                encoded_columns.len(),
                spec.input_features
            )));
        }
        Ok(Self {
            spec,
            dataset: dataset.ok_or_else(|| Error::Format("checkpoint lacks run.dataset".into()))?,
            task: task.ok_or_else(|| Error::Format("checkpoint lacks run.task".into()))?,
            encoded_columns,
            class_names,
            standardization,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Open { path: path.to_owned(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn check_name(stored: &str, prefix: &str, name: &str) -> Result<()> {
    if stored.strip_prefix(prefix) != Some(name) {
        return Err(Error::Format(format!("checkpoint tensor '{stored}' where '{prefix}{name}' was expected")));
    }
    Ok(())
}
