use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::Value;

use super::metrics::{aggregate_folds, AggregateMetrics, ClassMetrics, ConfusionMatrix, Mean, MetricSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub task: String,
    pub class_names: Vec<String>,
    pub per_fold: Vec<FoldResult>,
    pub aggregate: AggregateMetrics,
    /// One-vs-rest metrics over all folds pooled; empty for binary tasks.
    pub per_class: Vec<ClassMetrics>,
}

impl EvalReport {
    pub fn new(dataset: &str, task: &str, class_names: &[String], per_fold: Vec<FoldResult>, per_class: Vec<ClassMetrics>) -> Result<Self> {
        let metrics: Vec<MetricSet> = per_fold.iter().map(|f| f.metrics).collect();
        Ok(Self {
            dataset: dataset.to_owned(),
            task: task.to_owned(),
            class_names: class_names.to_vec(),
            aggregate: aggregate_folds(&metrics)?,
            per_fold,
            per_class,
        })
    }

    /// Every rate rounded to the 4 decimals the text formats carry.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        let ms = |m: &mut MetricSet| {
            for v in [&mut m.acc, &mut m.dr, &mut m.fpr] {
                *v = v.map(round4);
            }
        };
        for f in &mut r.per_fold {
            ms(&mut f.metrics);
        }
        for c in &mut r.per_class {
            ms(&mut c.metrics);
        }
        for m in [&mut r.aggregate.acc, &mut r.aggregate.dr, &mut r.aggregate.fpr] {
            m.value = m.value.map(round4);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    Csv,
    PrettyTable,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json-lines" => Ok(ReportFormat::JsonLines),
            "csv" => Ok(ReportFormat::Csv),
            "pretty-table" => Ok(ReportFormat::PrettyTable),
            _ => Err(Error::InvalidArgument(format!("unknown report format '{s}'"))),
        }
    }
}

fn round4(v: f64) -> f64 {
    format!("{v:.4}").parse().unwrap()
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "null".into(), |v| format!("{v:.4}"))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", v * 100.0))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).unwrap()
}

fn json_names(names: &[String]) -> String {
    format!("[{}]", names.iter().map(|n| json_str(n)).collect::<Vec<_>>().join(","))
}

fn json_metrics(m: &MetricSet) -> String {
    format!(
        "\"tp\":{},\"tn\":{},\"fp\":{},\"fn\":{},\"acc\":{},\"dr\":{},\"fpr\":{}",
        m.tp,
        m.tn,
        m.fp,
        m.fn_,
        num(m.acc),
        num(m.dr),
        num(m.fpr)
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// The matrix as a CSV block: a header of predicted classes, then one row per
/// actual class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("actual\\predicted");
    for n in cm.class_names() {
        out.push(',');
        out.push_str(&csv_field(n));
    }
    out.push('\n');
    for (a, name) in cm.class_names().iter().enumerate() {
        out.push_str(&csv_field(name));
        for v in cm.row(a) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::JsonLines => render_json_lines(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::PrettyTable => render_pretty(report),
    }
}

fn render_json_lines(r: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{{\"record\":\"run\",\"dataset\":{},\"task\":{},\"folds\":{},\"classes\":{}}}",
        json_str(&r.dataset),
        json_str(&r.task),
        r.per_fold.len(),
        json_names(&r.class_names)
    )
    .unwrap();
    for f in &r.per_fold {
        writeln!(out, "{{\"record\":\"fold\",\"fold\":{},{}}}", f.fold, json_metrics(&f.metrics)).unwrap();
    }
    let a = &r.aggregate;
    writeln!(
        out,
        "{{\"record\":\"aggregate\",\"folds\":{},\"acc\":{},\"acc_n\":{},\"dr\":{},\"dr_n\":{},\"fpr\":{},\"fpr_n\":{}}}",
        a.folds,
        num(a.acc.value),
        a.acc.count,
        num(a.dr.value),
        a.dr.count,
        num(a.fpr.value),
        a.fpr.count
    )
    .unwrap();
    for c in &r.per_class {
        writeln!(out, "{{\"record\":\"class\",\"class\":{},{}}}", json_str(&c.class), json_metrics(&c.metrics)).unwrap();
    }
    for f in &r.per_fold {
        let rows: Vec<String> = (0..f.confusion.classes())
            .map(|a| format!("[{}]", f.confusion.row(a).iter().map(u64::to_string).collect::<Vec<_>>().join(",")))
            .collect();
        writeln!(
            out,
            "{{\"record\":\"confusion\",\"fold\":{},\"classes\":{},\"counts\":[{}]}}",
            f.fold,
            json_names(f.confusion.class_names()),
            rows.join(",")
        )
        .unwrap();
    }
    out
}

fn render_csv(r: &EvalReport) -> String {
    let mut out = String::from("fold,tp,tn,fp,fn,acc,dr,fpr\n");
    for f in &r.per_fold {
        let m = &f.metrics;
        writeln!(out, "{},{},{},{},{},{},{},{}", f.fold, m.tp, m.tn, m.fp, m.fn_, cell(m.acc), cell(m.dr), cell(m.fpr))
            .unwrap();
    }
    out.push_str("\nmetric,mean,folds_defined\n");
    for (name, m) in [("acc", r.aggregate.acc), ("dr", r.aggregate.dr), ("fpr", r.aggregate.fpr)] {
        writeln!(out, "{name},{},{}", cell(m.value), m.count).unwrap();
    }
    if !r.per_class.is_empty() {
        out.push_str("\nclass,tp,tn,fp,fn,dr,fpr\n");
        for c in &r.per_class {
            let m = &c.metrics;
            writeln!(out, "{},{},{},{},{},{},{}", csv_field(&c.class), m.tp, m.tn, m.fp, m.fn_, cell(m.dr), cell(m.fpr))
                .unwrap();
        }
    }
    for f in &r.per_fold {
        writeln!(out, "\n# confusion fold {}", f.fold).unwrap();
        out.push_str(&confusion_csv(&f.confusion));
    }
    out
}

fn render_pretty(r: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "{} / {} / {} fold(s)", r.dataset, r.task, r.per_fold.len()).unwrap();
    writeln!(out, "{:<9} {:>8} {:>8} {:>8}", "fold", "DR%", "ACC%", "FPR%").unwrap();
    for f in &r.per_fold {
        let m = &f.metrics;
        writeln!(out, "{:<9} {:>8} {:>8} {:>8}", f.fold, pct(m.dr), pct(m.acc), pct(m.fpr)).unwrap();
    }
    let a = &r.aggregate;
    writeln!(out, "{:<9} {:>8} {:>8} {:>8}", "average", pct(a.dr.value), pct(a.acc.value), pct(a.fpr.value)).unwrap();
    if !r.per_class.is_empty() {
        let width = r.per_class.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
        writeln!(out, "\n{:<width$} {:>8} {:>8}", "class", "DR%", "FPR%").unwrap();
        for c in &r.per_class {
            writeln!(out, "{:<width$} {:>8} {:>8}", c.class, pct(c.metrics.dr), pct(c.metrics.fpr)).unwrap();
        }
    }
    out
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::Format(format!("report record lacks '{key}'")))
}

fn int(v: &Value, key: &str) -> Result<u64> {
    field(v, key)?.as_u64().ok_or_else(|| Error::Format(format!("'{key}' is not an integer")))
}

fn opt(v: &Value, key: &str) -> Result<Option<f64>> {
    match field(v, key)? {
        Value::Null => Ok(None),
        x => x.as_f64().map(Some).ok_or_else(|| Error::Format(format!("'{key}' is not a number"))),
    }
}

fn text(v: &Value, key: &str) -> Result<String> {
    field(v, key)?.as_str().map(str::to_owned).ok_or_else(|| Error::Format(format!("'{key}' is not a string")))
}

fn names(v: &Value, key: &str) -> Result<Vec<String>> {
    field(v, key)?
        .as_array()
        .ok_or_else(|| Error::Format(format!("'{key}' is not an array")))?
        .iter()
        .map(|s| s.as_str().map(str::to_owned).ok_or_else(|| Error::Format(format!("'{key}' holds a non-string"))))
        .collect()
}

fn metrics(v: &Value) -> Result<MetricSet> {
    Ok(MetricSet {
        tp: int(v, "tp")?,
        tn: int(v, "tn")?,
        fp: int(v, "fp")?,
        fn_: int(v, "fn")?,
        acc: opt(v, "acc")?,
        dr: opt(v, "dr")?,
        fpr: opt(v, "fpr")?,
    })
}

/// Reads back the json-lines rendering.
pub fn parse_json_lines(textual: &str) -> Result<EvalReport> {
    let mut head = None;
    let mut folds: Vec<(usize, MetricSet)> = Vec::new();
    let mut confusions: Vec<ConfusionMatrix> = Vec::new();
    let mut aggregate = None;
    let mut per_class = Vec::new();
    for line in textual.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Format(format!("bad report line: {e}")))?;
        match text(&v, "record")?.as_str() {
            "run" => head = Some((text(&v, "dataset")?, text(&v, "task")?, names(&v, "classes")?)),
            "fold" => folds.push((int(&v, "fold")? as usize, metrics(&v)?)),
            "aggregate" => {
                let mean = |k: &str| -> Result<Mean> { Ok(Mean { value: opt(&v, k)?, count: int(&v, &format!("{k}_n"))? as usize }) };
                aggregate = Some(AggregateMetrics {
                    folds: int(&v, "folds")? as usize,
                    acc: mean("acc")?,
                    dr: mean("dr")?,
                    fpr: mean("fpr")?,
                })
            }
            "class" => per_class.push(ClassMetrics { class: text(&v, "class")?, metrics: metrics(&v)? }),
            "confusion" => {
                let classes = names(&v, "classes")?;
                let mut counts = Vec::new();
                for row in field(&v, "counts")?.as_array().ok_or_else(|| Error::Format("counts is not an array".into()))? {
                    for c in row.as_array().ok_or_else(|| Error::Format("count row is not an array".into()))? {
                        counts.push(c.as_u64().ok_or_else(|| Error::Format("count is not an integer".into()))?);
                    }
                }
                confusions.push(ConfusionMatrix::from_counts(&classes, counts)?);
            }
            other => return Err(Error::Format(format!("unknown record '{other}'"))),
        }
    }
    let (dataset, task, class_names) = head.ok_or_else(|| Error::Format("report lacks a run record".into()))?;
    if folds.len() != confusions.len() {
        return Err(Error::Format(format!("{} folds but {} confusion matrices", folds.len(), confusions.len())));
    }
    let per_fold = folds
        .into_iter()
        .zip(confusions)
        .map(|((fold, metrics), confusion)| FoldResult { fold, metrics, confusion })
        .collect();
    Ok(EvalReport {
        dataset,
        task,
        class_names,
        per_fold,
        aggregate: aggregate.ok_or_else(|| Error::Format("report lacks an aggregate record".into()))?,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::eval::{binary_metrics, per_class_metrics};

    fn report(cms: Vec<ConfusionMatrix>, with_classes: bool) -> EvalReport {
        let names = cms[0].class_names().to_vec();
        let mut pooled = ConfusionMatrix::zeros(&names);
        let folds = cms
            .into_iter()
            .enumerate()
            .map(|(fold, cm)| {
                pooled.merge(&cm).unwrap();
                FoldResult { fold, metrics: binary_metrics(&cm, 0).unwrap(), confusion: cm }
            })
            .collect();
        let per_class = if with_classes { per_class_metrics(&pooled).unwrap() } else { Vec::new() };
        EvalReport::new("synthetic", "multi", &names, folds, per_class).unwrap()
    }

    fn three() -> Vec<String> {
        vec!["Normal".into(), "DoS, flood".into(), "U2R".into()]
    }

    #[test]
    fn empty_per_class_is_omitted() {
        let r = report(vec![ConfusionMatrix::from_counts(&three(), vec![1; 9]).unwrap()], false);
        let csv = render_report(&r, ReportFormat::Csv);
        assert!(!csv.contains("class,tp"));
        assert!(!render_report(&r, ReportFormat::JsonLines).contains("\"record\":\"class\""));
        assert!(!render_report(&r, ReportFormat::PrettyTable).contains("class"));
    }

    #[test]
    fn csv_has_one_header_per_table() {
        let cm = ConfusionMatrix::from_counts(&three(), vec![3, 1, 0, 0, 2, 1, 1, 0, 4]).unwrap();
        let r = report(vec![cm.clone(), cm], true);
        let csv = render_report(&r, ReportFormat::Csv);
        let tables: Vec<&str> = csv.split("\n\n").collect();
        assert_eq!(tables.len(), 5);
        assert_eq!(csv.matches("fold,tp,tn").count(), 1);
        assert_eq!(csv.matches("class,tp,tn").count(), 1);
        assert!(csv.contains("\"DoS, flood\",4,16,2,2,"));
        assert!(tables[3].contains("actual\\predicted,Normal,\"DoS, flood\",U2R\nNormal,3,1,0\n"));
    }

    #[test]
    fn undefined_rates_render_as_null_and_blank() {
        let cm = ConfusionMatrix::from_counts(&three()[..2], vec![4, 0, 0, 0]).unwrap();
        let r = report(vec![cm], false);
        let j = render_report(&r, ReportFormat::JsonLines);
        assert!(j.contains("\"dr\":null"));
        assert!(render_report(&r, ReportFormat::Csv).contains("0,0,4,0,0,1.0000,,0.0000"));
        assert_eq!(parse_json_lines(&j).unwrap(), r.rounded());
    }

    #[test]
    fn json_lines_parse_with_serde() {
        let cm = ConfusionMatrix::from_counts(&three(), vec![3, 1, 0, 0, 2, 1, 1, 0, 4]).unwrap();
        let j = render_report(&report(vec![cm], true), ReportFormat::JsonLines);
        for line in j.lines() {
            serde_json::from_str::<Value>(line).unwrap();
        }
        assert!(j.lines().next().unwrap().starts_with("{\"record\":\"run\""));
    }

    proptest! {
        #[test]
        fn json_lines_round_trip(
            counts in prop::collection::vec(prop::collection::vec(0u64..40, 9), 1..5),
            with_classes in any::<bool>(),
        ) {
            let cms = counts.into_iter().map(|c| ConfusionMatrix::from_counts(&three(), c).unwrap()).collect();
            let r = report(cms, with_classes);
            let back = parse_json_lines(&render_report(&r, ReportFormat::JsonLines)).unwrap();
            prop_assert_eq!(back, r.rounded());
        }
    }
}
