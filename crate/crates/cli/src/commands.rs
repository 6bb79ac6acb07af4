use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lunet_core::data::{
    build_table, encode_with_columns, from_encoded, load_files, make_labels, read_table_cache, standardize,
    stratified_kfold_named, stratified_subsample, synth_dataset, write_table_cache, DatasetSchema, DatasetTable, Task,
};
use lunet_core::eval::{
    binary_metrics, confusion, confusion_csv, per_class_metrics, render_report, ConfusionMatrix, EvalReport, FoldResult,
    ReportFormat,
};
use lunet_core::gradcheck::{layer_suite, model_check, GradCheckReport};
use lunet_core::nn::LayerKind;
use lunet_core::training::{fit, predict_rows};
use lunet_core::{Checkpoint, Error, LuNetModel};

use crate::config::{DatasetChoice, RunConfig, Split};
use crate::error::{CliError, Failure, StageExt};

/// Every class keeps at least this many rows when subsampling, so any fold
/// count up to 10 stays feasible.
pub const SUBSAMPLE_MIN_PER_CLASS: usize = 10;
/// Folds of the single split used by `train` (fold 0 is held out).
pub const TRAIN_SPLIT_FOLDS: usize = 5;
const PREDICT_CHUNK: usize = 512;

fn synthetic_table(cfg: &RunConfig) -> Result<DatasetTable, CliError> {
    let s = cfg.synth;
    let mut table = synth_dataset(s.classes, s.samples, s.features, s.separation, cfg.seed)
        .stage(Failure::Config, "generate synthetic data")?;
    if cfg.task == Task::Binary && s.classes > 2 {
        table.labels.iter_mut().for_each(|l| *l = usize::from(*l != 0));
        table.class_names = vec!["normal".into(), "attack".into()];
    }
    Ok(table)
}

/// The encoded, labelled, unstandardized table, optionally aligned to a
/// stored column list, after any configured subsampling.
pub fn load_table(cfg: &RunConfig, columns: Option<&[String]>, task: Task) -> Result<DatasetTable, CliError> {
    let table = match cfg.dataset {
        DatasetChoice::Synthetic => {
            let table = synthetic_table(&RunConfig { task, ..cfg.clone() })?;
            if let Some(columns) = columns {
                if columns != table.encoded_columns {
                    return Err(CliError::new(
                        Failure::Data,
                        "encode data",
                        Error::WidthMismatch { expected: columns.len(), found: table.width() }.to_string(),
                    ));
                }
            }
            table
        }
        DatasetChoice::Real(name) => {
            let schema = DatasetSchema::for_name(name);
            match (&cfg.cache, columns) {
                (Some(cache), None) if cache.exists() => read_table_cache(cache).stage(Failure::Data, "read table cache")?,
                _ => {
                    let raw = load_files(&cfg.data_paths, &schema).stage(Failure::Data, "load data")?;
                    let table = match columns {
                        None => build_table(&raw, &schema, task).stage(Failure::Data, "encode data")?,
                        Some(columns) => {
                            let encoded = encode_with_columns(&raw, columns).stage(Failure::Data, "encode data")?;
                            let (labels, names) = make_labels(&raw, &schema, task).stage(Failure::Data, "label data")?;
                            from_encoded(encoded, labels, names).stage(Failure::Data, "encode data")?
                        }
                    };
                    if let (Some(cache), None) = (&cfg.cache, columns) {
                        write_table_cache(cache, &table).stage(Failure::Other, "write table cache")?;
                    }
                    table
                }
            }
        }
    };
    match cfg.subsample {
        Some(n) if n < table.rows() => {
            let rows = stratified_subsample(&table.labels, n, SUBSAMPLE_MIN_PER_CLASS, cfg.seed);
            table.select(&rows).stage(Failure::Data, "subsample")
        }
        _ => Ok(table),
    }
}

/// Fits standardization on `train`, then trains a fresh model on it.
fn train_on(
    cfg: &RunConfig,
    table: &DatasetTable,
    train: &[usize],
    seed: u64,
    fold: usize,
    log: &mut dyn Write,
) -> Result<(LuNetModel, DatasetTable), CliError> {
    let stage = format!("fold {fold}");
    let standardized = standardize(table, train).stage(Failure::Data, &format!("{stage}: standardize"))?;
    let mut spec = cfg.model.clone();
    spec.input_features = table.width();
    spec.num_classes = table.num_classes();
    spec.init_seed = seed;
    let mut model = LuNetModel::build(&spec).stage(Failure::Config, &format!("{stage}: build model"))?;
    let tc = lunet_core::training::TrainConfig { seed, ..cfg.train };
    let mut io_error = None;
    fit(&mut model, &standardized, train, &tc, &cfg.optimizer, |m| {
        let line = format!(
            "{{\"record\":\"epoch\",\"fold\":{fold},\"epoch\":{},\"mean_loss\":{:.6},\"train_accuracy\":{:.4}}}",
            m.epoch, m.mean_loss, m.train_accuracy
        );
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
    })
    .stage(Failure::Other, &format!("{stage}: train"))?;
    if let Some(e) = io_error {
        return Err(CliError::new(Failure::Other, "write log", e.to_string()));
    }
    Ok((model, standardized))
}

fn evaluate_rows(
    model: &mut LuNetModel,
    standardized: &DatasetTable,
    rows: &[usize],
    fold: usize,
) -> Result<FoldResult, CliError> {
    let stage = format!("fold {fold}: evaluate");
    let predicted = predict_rows(model, standardized, rows, PREDICT_CHUNK).stage(Failure::Other, &stage)?;
    let cm = confusion(&standardized.gather_labels(rows), &predicted, &standardized.class_names).stage(Failure::Other, &stage)?;
    let metrics = binary_metrics(&cm, 0).stage(Failure::Other, &stage)?;
    Ok(FoldResult { fold, metrics, confusion: cm })
}

fn build_report(cfg: &RunConfig, task: Task, class_names: &[String], per_fold: Vec<FoldResult>) -> Result<EvalReport, CliError> {
    let per_class = if task == Task::Multi {
        let mut pooled = ConfusionMatrix::zeros(class_names);
        for f in &per_fold {
            pooled.merge(&f.confusion).stage(Failure::Other, "report")?;
        }
        per_class_metrics(&pooled).stage(Failure::Other, "report")?
    } else {
        Vec::new()
    };
    EvalReport::new(&cfg.dataset.to_string(), task.as_str(), class_names, per_fold, per_class).stage(Failure::Other, "report")
}

pub const REPORT_FILES: [(&str, ReportFormat); 3] = [
    ("report.json-lines", ReportFormat::JsonLines),
    ("report.csv", ReportFormat::Csv),
    ("report.txt", ReportFormat::PrettyTable),
];

/// Writes the report in every format plus one confusion CSV per fold.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, CliError> {
    let stage = "write report";
    fs::create_dir_all(dir).stage(Failure::Other, stage)?;
    let mut written = Vec::new();
    for (name, format) in REPORT_FILES {
        let path = dir.join(name);
        fs::write(&path, render_report(report, format)).stage(Failure::Other, stage)?;
        written.push(path);
    }
    for f in &report.per_fold {
        let path = dir.join(format!("confusion_fold{}.csv", f.fold));
        fs::write(&path, confusion_csv(&f.confusion)).stage(Failure::Other, stage)?;
        written.push(path);
    }
    Ok(written)
}

/// Stratified k-fold cross-validation with a fresh model per fold, seeded
/// `seed + fold`.
pub fn cmd_crossval(cfg: &RunConfig, log: &mut dyn Write) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    cfg.validate_folds()?;
    let table = load_table(cfg, None, cfg.task)?;
    let plan = stratified_kfold_named(&table.labels, cfg.folds, cfg.seed, Some(&table.class_names))
        .stage(Failure::Data, "split folds")?;
    let mut per_fold = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (train, val) = plan.split(fold);
        let seed = cfg.seed.wrapping_add(fold as u64);
        let (mut model, standardized) = train_on(cfg, &table, &train, seed, fold, log)?;
        per_fold.push(evaluate_rows(&mut model, &standardized, &val, fold)?);
    }
    let report = build_report(cfg, cfg.task, &table.class_names, per_fold)?;
    write_report(&cfg.output_dir, &report)?;
    Ok(report)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub report: EvalReport,
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join("model.lunet"))
}

fn holdout_split(cfg: &RunConfig, table: &DatasetTable) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let plan = stratified_kfold_named(&table.labels, TRAIN_SPLIT_FOLDS, cfg.seed, Some(&table.class_names))
        .stage(Failure::Data, "split data")?;
    Ok(plan.split(0))
}

/// Trains on folds 1-4 of a 5-fold split, saves the checkpoint and reports
/// on the held-out fold 0.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let table = load_table(cfg, None, cfg.task)?;
    let (train, holdout) = holdout_split(cfg, &table)?;
    let (mut model, standardized) = train_on(cfg, &table, &train, cfg.seed, 0, log)?;
    let path = checkpoint_path(cfg);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).stage(Failure::Other, "save checkpoint")?;
    }
    Checkpoint::capture(&model, &cfg.dataset.to_string(), cfg.task, &standardized)
        .and_then(|ck| ck.save(&path))
        .stage(Failure::Other, "save checkpoint")?;
    let result = evaluate_rows(&mut model, &standardized, &holdout, 0)?;
    let report = build_report(cfg, cfg.task, &table.class_names, vec![result])?;
    write_report(&cfg.output_dir, &report)?;
    Ok(TrainOutcome { checkpoint: path, report })
}

/// Infer-mode evaluation of a saved model. Encoding columns, standardization
/// and the task come from the checkpoint.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let path = cfg.checkpoint.as_ref().ok_or_else(|| CliError::config("config", "evaluate needs --checkpoint"))?;
    let ck = Checkpoint::load(path).stage(Failure::Data, "load checkpoint")?;
    if cfg.task_set && cfg.task != ck.task {
        return Err(CliError::config("config", format!("task {} does not match the checkpoint's {}", cfg.task, ck.task)));
    }
    let table = load_table(cfg, Some(&ck.encoded_columns), ck.task)?;
    if table.class_names != ck.class_names {
        return Err(CliError::new(Failure::Data, "label data", "class vocabulary differs from the checkpoint"));
    }
    let rows = match cfg.split {
        Split::All => (0..table.rows()).collect(),
        Split::Train => holdout_split(cfg, &table)?.0,
        Split::Holdout => holdout_split(cfg, &table)?.1,
    };
    let features = ck.standardization.apply(&table.features).stage(Failure::Data, "standardize")?;
    let standardized = DatasetTable { features, standardization: Some(ck.standardization.clone()), ..table };
    let mut model = ck.restore().stage(Failure::Data, "load checkpoint")?;
    let result = evaluate_rows(&mut model, &standardized, &rows, 0)?;
    let report = build_report(cfg, ck.task, &ck.class_names, vec![result])?;
    write_report(&cfg.output_dir, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScale {
    Layers,
    Model,
    All,
}

/// Finite-difference checks; `fault` corrupts the backward pass of one
/// layer type (test hook).
pub fn cmd_gradcheck(scale: GradScale, fault: Option<LayerKind>, seed: u64) -> Result<Vec<GradCheckReport>, CliError> {
    let mut reports = Vec::new();
    if matches!(scale, GradScale::Layers | GradScale::All) {
        reports.extend(layer_suite(fault, seed).stage(Failure::Other, "gradcheck")?);
    }
    if matches!(scale, GradScale::Model | GradScale::All) {
        reports.push(model_check(fault, seed).stage(Failure::Other, "gradcheck")?);
    }
    Ok(reports)
}

pub fn gradcheck_table(reports: &[GradCheckReport]) -> String {
    let mut out = format!("{:<24} {:>12}  status\n", "target", "max rel err");
    for r in reports {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}
