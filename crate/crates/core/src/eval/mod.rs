//! Confusion matrices, detection metrics and report rendering.

mod metrics;
mod report;

pub use metrics::{
    aggregate_folds, binary_metrics, confusion, per_class_metrics, AggregateMetrics, ClassMetrics, ConfusionMatrix,
    Mean, MetricSet,
};
pub use report::{confusion_csv, parse_json_lines, render_report, EvalReport, FoldResult, ReportFormat};
