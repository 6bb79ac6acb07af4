//! Run configuration: built-in defaults, then a flat `key=value` file, then
//! command-line flags, each overriding the previous.
//!
//! ```text
//! # comment
//! dataset = nsl-kdd
//! data_path = KDDTrain+.txt,KDDTest+.txt
//! model.levels = 64,128,256
//! train.epochs = 20
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lunet_core::data::{DatasetName, Task};
use lunet_core::training::{RmsPropConfig, TrainConfig};
use lunet_core::LuNetSpec;

use crate::error::{CliError, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Real(DatasetName),
    Synthetic,
}

impl FromStr for DatasetChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nsl-kdd" => Ok(DatasetChoice::Real(DatasetName::NslKdd)),
            "unsw-nb15" => Ok(DatasetChoice::Real(DatasetName::UnswNb15)),
            "synthetic" => Ok(DatasetChoice::Synthetic),
            _ => Err(format!("unknown dataset '{s}' (nsl-kdd|unsw-nb15|synthetic)")),
        }
    }
}

impl fmt::Display for DatasetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetChoice::Real(n) => write!(f, "{n}"),
            DatasetChoice::Synthetic => f.write_str("synthetic"),
        }
    }
}

/// Parameters of the generated fixture used when `dataset = synthetic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples: usize,
    pub features: usize,
    pub separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 2, samples: 64, features: 40, separation: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Holdout,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "holdout" => Ok(Split::Holdout),
            _ => Err(format!("unknown split '{s}' (all|train|holdout)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetChoice,
    pub data_paths: Vec<PathBuf>,
    pub task: Task,
    /// Whether `task` was given explicitly rather than defaulted.
    pub task_set: bool,
    pub folds: usize,
    pub seed: u64,
    /// `input_features`, `num_classes` and `init_seed` are filled in per run.
    pub model: LuNetSpec,
    pub train: TrainConfig,
    pub optimizer: RmsPropConfig,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Stratified sample size drawn before splitting.
    pub subsample: Option<usize>,
    /// Encoded-table cache file, written on first use and read afterwards.
    pub cache: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetChoice::Synthetic,
            data_paths: Vec::new(),
            task: Task::Binary,
            task_set: false,
            folds: 10,
            seed: 0,
            model: LuNetSpec::default(),
            train: TrainConfig::default(),
            optimizer: RmsPropConfig::default(),
            output_dir: PathBuf::from("lunet-out"),
            checkpoint: None,
            subsample: None,
            cache: None,
            synth: SynthConfig::default(),
            split: Split::All,
        }
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config("config", format!("line {}: expected key=value, got '{line}'", i + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::config("config", format!("bad value '{value}' for {key}")))
}

fn paths(value: &str) -> Vec<PathBuf> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "dataset" => self.dataset = value.parse().map_err(|e: String| CliError::config("config", e))?,
            "data_path" => self.data_paths = paths(value),
            "task" => {
                self.task = value.parse().map_err(|e: lunet_core::Error| CliError::config("config", e.to_string()))?;
                self.task_set = true;
            }
            "folds" => self.folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "split" => self.split = value.parse().map_err(|e: String| CliError::config("config", e))?,
            "data.subsample" => self.subsample = Some(parse(key, value)?),
            "data.cache" => self.cache = Some(PathBuf::from(value)),
            "synth.classes" => self.synth.classes = parse(key, value)?,
            "synth.samples" => self.synth.samples = parse(key, value)?,
            "synth.features" => self.synth.features = parse(key, value)?,
            "synth.separation" => self.synth.separation = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.shuffle" => self.train.shuffle = parse(key, value)?,
            "optimizer.learning_rate" => self.optimizer.learning_rate = parse(key, value)?,
            "optimizer.rho" => self.optimizer.rho = parse(key, value)?,
            "optimizer.epsilon" => self.optimizer.epsilon = parse(key, value)?,
            _ => {
                let known = self.model.set_pair(key, value).map_err(|e| CliError::config("config", e.to_string()))?;
                if !known {
                    return Err(CliError::config("config", format!("unknown key '{key}'")));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), CliError> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Checks that hold for every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::config("config", m));
        if let DatasetChoice::Real(name) = self.dataset {
            if self.data_paths.is_empty() {
                return fail(format!("dataset {name} needs data_path"));
            }
            if let Some(missing) = self.data_paths.iter().find(|p| !p.exists()) {
                return Err(CliError::new(Failure::Data, "load data", format!("data file {} does not exist", missing.display())));
            }
        }
        self.optimizer.validate().or_else(|e| fail(e.to_string()))?;
        if self.train.epochs == 0 || self.train.batch_size < 2 {
            return fail("train.epochs must be >= 1 and train.batch_size >= 2".into());
        }
        Ok(())
    }

    pub fn validate_folds(&self) -> Result<(), CliError> {
        if self.folds < 2 {
            return Err(CliError::config("config", format!("folds must be at least 2, got {}", self.folds)));
        }
        Ok(())
    }
}
