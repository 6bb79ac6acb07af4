use crate::error::{Error, Result};

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: &[String]) -> Self {
        let n = class_names.len();
        Self { counts: vec![0; n * n], class_names: class_names.to_vec() }
    }

    /// Row-major `[classes * classes]` counts.
    pub fn from_counts(class_names: &[String], counts: Vec<u64>) -> Result<Self> {
        let n = class_names.len();
        if counts.len() != n * n {
            return Err(Error::ShapeMismatch {
                op: "confusion",
                detail: format!("{} counts for {n} classes", counts.len()),
            });
        }
        Ok(Self { counts, class_names: class_names.to_vec() })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes() + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, actual: usize) -> &[u64] {
        let n = self.classes();
        &self.counts[actual * n..(actual + 1) * n]
    }

    pub fn row_total(&self, actual: usize) -> u64 {
        self.row(actual).iter().sum()
    }

    pub fn column_total(&self, predicted: usize) -> u64 {
        (0..self.classes()).map(|a| self.get(a, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Element-wise sum with a matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::InvalidArgument("merging confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            detail: format!("{} actual labels, {} predictions", actual.len(), predicted.len()),
        });
    }
    let n = class_names.len();
    let mut cm = ConfusionMatrix::zeros(class_names);
    for (&a, &p) in actual.iter().zip(predicted) {
        if let Some(&label) = [a, p].iter().find(|&&l| l >= n) {
            return Err(Error::LabelOutOfRange { label, classes: n });
        }
        cm.counts[a * n + p] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Detection counts and the three rates derived from them. A rate whose
/// denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub acc: Option<f64>,
    pub dr: Option<f64>,
    pub fpr: Option<f64>,
}

impl MetricSet {
    /// `acc = (tp+tn)/all`, `dr = tp/(tp+fn)`, `fpr = fp/(fp+tn)`.
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self {
            tp,
            tn,
            fp,
            fn_,
            acc: ratio(tp + tn, tp + tn + fp + fn_),
            dr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
        }
    }
}

/// Attack-vs-normal collapse: every class other than `normal` is positive, so
/// an attack predicted as a different attack still counts as detected.
pub fn binary_metrics(cm: &ConfusionMatrix, normal: usize) -> Result<MetricSet> {
    let n = cm.classes();
    if normal >= n {
        return Err(Error::LabelOutOfRange { label: normal, classes: n });
    }
    let tn = cm.get(normal, normal);
    let fp = cm.row_total(normal) - tn;
    let fn_ = cm.column_total(normal) - tn;
    let tp = cm.total() - tn - fp - fn_;
    Ok(MetricSet::from_counts(tp, tn, fp, fn_))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub metrics: MetricSet,
}

/// One-vs-rest metrics for every class.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<Vec<ClassMetrics>> {
    if cm.classes() < 2 {
        return Err(Error::InvalidArgument("per-class metrics need at least 2 classes".into()));
    }
    let total = cm.total();
    Ok((0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_ = cm.row_total(c) - tp;
            let fp = cm.column_total(c) - tp;
            ClassMetrics {
                class: cm.class_names()[c].clone(),
                metrics: MetricSet::from_counts(tp, total - tp - fn_ - fp, fp, fn_),
            }
        })
        .collect())
}

/// Mean of the defined values, with how many there were.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mean {
    pub value: Option<f64>,
    pub count: usize,
}

impl Mean {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let defined: Vec<f64> = values.into_iter().flatten().collect();
        let count = defined.len();
        let value = (count > 0).then(|| defined.iter().sum::<f64>() / count as f64);
        Self { value, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateMetrics {
    pub folds: usize,
    pub acc: Mean,
    pub dr: Mean,
    pub fpr: Mean,
}

/// Unweighted per-fold means; undefined fold values are skipped and counted.
pub fn aggregate_folds(per_fold: &[MetricSet]) -> Result<AggregateMetrics> {
    if per_fold.is_empty() {
        return Err(Error::InvalidArgument("aggregating zero folds".into()));
    }
    Ok(AggregateMetrics {
        folds: per_fold.len(),
        acc: Mean::of(per_fold.iter().map(|m| m.acc)),
        dr: Mean::of(per_fold.iter().map(|m| m.dr)),
        fpr: Mean::of(per_fold.iter().map(|m| m.fpr)),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1], &[0, 1], &names(2)).unwrap();
        assert_eq!(cm.counts(), &[1, 0, 0, 1]);
        let cm = confusion(&[0, 0], &[1, 1], &names(2)).unwrap();
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(confusion(&[], &[], &names(2)).unwrap().total(), 0);
        assert!(confusion(&[0], &[], &names(2)).is_err());
        assert!(matches!(confusion(&[0], &[2], &names(2)), Err(Error::LabelOutOfRange { label: 2, classes: 2 })));
    }

    #[test]
    fn table_example_metrics() {
        let cm = ConfusionMatrix::from_counts(&names(2), vec![95, 5, 10, 90]).unwrap();
        let m = binary_metrics(&cm, 0).unwrap();
        assert_eq!((m.tp, m.tn, m.fp, m.fn_), (90, 95, 5, 10));
        assert_eq!(m.dr, Some(0.9));
        assert_eq!(m.fpr, Some(0.05));
        assert_eq!(m.acc, Some(0.925));
    }

    #[test]
    fn perfect_and_undefined() {
        let m = MetricSet::from_counts(3, 4, 0, 0);
        assert_eq!((m.acc, m.fpr), (Some(1.0), Some(0.0)));
        let m = MetricSet::from_counts(0, 4, 0, 0);
        assert_eq!(m.dr, None);
        let m = MetricSet::from_counts(4, 0, 0, 0);
        assert_eq!(m.fpr, None);
    }

    #[test]
    fn hand_collapsed_three_class() {
        let cm = ConfusionMatrix::from_counts(&names(3), vec![2, 1, 0, 0, 3, 0, 1, 0, 1]).unwrap();
        let pc = per_class_metrics(&cm).unwrap();
        assert_eq!(pc[0].metrics.dr, Some(2.0 / 3.0));
        assert_eq!(pc[0].metrics.fpr, Some(1.0 / 5.0));
    }

    #[test]
    fn diagonal_and_absent_class() {
        let cm = ConfusionMatrix::from_counts(&names(3), vec![2, 0, 0, 0, 3, 0, 0, 0, 0]).unwrap();
        let pc = per_class_metrics(&cm).unwrap();
        assert_eq!(pc[0].metrics.dr, Some(1.0));
        assert_eq!(pc[1].metrics.fpr, Some(0.0));
        assert_eq!(pc[2].metrics.dr, None);
    }

    #[test]
    fn aggregate_examples() {
        let a = MetricSet::from_counts(98, 0, 0, 2);
        let b = MetricSet::from_counts(100, 0, 0, 0);
        let agg = aggregate_folds(&[a, b]).unwrap();
        assert!((agg.acc.value.unwrap() - 0.99).abs() < 1e-15);
        assert_eq!(agg.fpr, Mean { value: None, count: 0 });
        assert_eq!(aggregate_folds(&[a, a]).unwrap().acc.value, a.acc);
        assert!(aggregate_folds(&[]).is_err());

        let table_acc = [99.09, 99.11, 99.30, 99.34, 99.36].map(Some);
        assert!((Mean::of(table_acc).value.unwrap() - 99.24).abs() < 1e-9);
    }

    fn matrix(n: usize) -> impl Strategy<Value = ConfusionMatrix> {
        prop::collection::vec(0u64..50, n * n).prop_map(move |c| ConfusionMatrix::from_counts(&names(n), c).unwrap())
    }

    proptest! {
        #[test]
        fn rates_recompute_bit_for_bit(cm in (2usize..6).prop_flat_map(matrix), normal in 0usize..2) {
            let m = binary_metrics(&cm, normal).unwrap();
            prop_assert_eq!(m.tp + m.tn + m.fp + m.fn_, cm.total());
            let total = cm.total();
            if total > 0 {
                prop_assert_eq!(m.acc.unwrap().to_bits(), ((m.tp + m.tn) as f64 / total as f64).to_bits());
            }
            for pc in per_class_metrics(&cm).unwrap() {
                let r = MetricSet::from_counts(pc.metrics.tp, pc.metrics.tn, pc.metrics.fp, pc.metrics.fn_);
                prop_assert_eq!(r, pc.metrics);
            }
        }

        #[test]
        fn two_class_one_vs_rest_matches_binary(cm in matrix(2)) {
            prop_assert_eq!(per_class_metrics(&cm).unwrap()[1].metrics, binary_metrics(&cm, 0).unwrap());
        }

        #[test]
        fn rows_sum_to_class_counts(labels in prop::collection::vec((0usize..4, 0usize..4), 0..100)) {
            let (a, p): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
            let cm = confusion(&a, &p, &names(4)).unwrap();
            prop_assert_eq!(cm.total() as usize, a.len());
            for c in 0..4 {
                prop_assert_eq!(cm.row_total(c) as usize, a.iter().filter(|&&x| x == c).count());
            }
        }

        #[test]
        fn aggregation_ignores_fold_order(counts in prop::collection::vec((0u64..30, 0u64..30, 0u64..30, 0u64..30), 1..8)) {
            let folds: Vec<MetricSet> = counts.iter().map(|&(a, b, c, d)| MetricSet::from_counts(a, b, c, d)).collect();
            let mut rev = folds.clone();
            rev.reverse();
            let (x, y) = (aggregate_folds(&folds).unwrap(), aggregate_folds(&rev).unwrap());
            prop_assert_eq!(x.acc.count, y.acc.count);
            if let (Some(p), Some(q)) = (x.acc.value, y.acc.value) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
