use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// `(train, validation)` sample indices for fold `fold`, each ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        assert!(fold < self.k, "fold {fold} out of range for k = {}", self.k);
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != fold)
    }
}

fn class_name(names: Option<&[String]>, class: usize) -> String {
    names.and_then(|n| n.get(class)).cloned().unwrap_or_else(|| format!("class {class}"))
}

fn members_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Per class (ascending index): shuffle the members with one seeded stream,
/// then deal them round-robin, continuing the deal position across classes.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_named(labels, k, seed, None)
}

/// As [`stratified_kfold`], naming classes in errors.
pub fn stratified_kfold_named(labels: &[usize], k: usize, seed: u64, class_names: Option<&[String]>) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let members = members_by_class(labels);
    for (class, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(Error::ClassTooSmall { class: class_name(class_names, class), count: m.len(), k });
        }
    }
    let mut rng = Rng::new(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for mut m in members {
        rng.shuffle(&mut m);
        for i in m {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignments })
}

/// Stratified sample of about `n` rows: class quotas proportional to class
/// size (largest remainder), each raised to at least `min_per_class` where the
/// class is that large. Returned indices are ascending.
pub fn stratified_subsample(labels: &[usize], n: usize, min_per_class: usize, seed: u64) -> Vec<usize> {
    if n >= labels.len() {
        return (0..labels.len()).collect();
    }
    let members = members_by_class(labels);
    let total = labels.len() as f64;
    let exact: Vec<f64> = members.iter().map(|m| n as f64 * m.len() as f64 / total).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut short = n - quota.iter().sum::<usize>();
    for c in order {
        if short == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }
    let mut rng = Rng::new(seed);
    let mut picked = Vec::with_capacity(n);
    for (mut m, q) in members.into_iter().zip(quota) {
        let q = q.max(min_per_class).min(m.len());
        rng.shuffle(&mut m);
        picked.extend_from_slice(&m[..q]);
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_stratification() {
        let plan = stratified_kfold(&[0, 0, 0, 0, 1, 1, 1, 1], 2, 7).unwrap();
        for f in 0..2 {
            let (_, val) = plan.split(f);
            let a = val.iter().filter(|&&i| i < 4).count();
            assert_eq!((a, val.len() - a), (2, 2));
        }
    }

    #[test]
    fn small_class_is_named() {
        let names: Vec<String> = vec!["Normal".into(), "U2R".into()];
        let err = stratified_kfold_named(&[0, 0, 0, 0, 1, 1, 1], 4, 0, Some(&names)).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { ref class, count: 3, k: 4 } if class == "U2R"), "{err}");
        assert!(stratified_kfold(&[0, 0], 1, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        assert_eq!(stratified_kfold(&labels, 5, 3).unwrap(), stratified_kfold(&labels, 5, 3).unwrap());
        assert_ne!(stratified_kfold(&labels, 5, 3).unwrap(), stratified_kfold(&labels, 5, 4).unwrap());
    }

    #[test]
    fn subsample_keeps_proportions() {
        let labels: Vec<usize> = (0..1000).map(|i| if i < 900 { 0 } else if i < 997 { 1 } else { 2 }).collect();
        let s = stratified_subsample(&labels, 100, 2, 1);
        let count = |c| s.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(0), count(1), count(2)), (90, 10, 2));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, stratified_subsample(&labels, 100, 2, 1));
    }

    proptest! {
        #[test]
        fn folds_balance_and_partition(
            labels in prop::collection::vec(0usize..4, 40..200),
            k in prop::sample::select(vec![2usize, 4, 6, 8, 10]),
            seed in any::<u64>(),
        ) {
            let mut labels = labels;
            // every present class needs k members
            for c in 0..4 {
                for _ in 0..k {
                    labels.push(c);
                }
            }
            let plan = stratified_kfold(&labels, k, seed).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in 0..k {
                let (train, val) = plan.split(f);
                prop_assert_eq!(train.len() + val.len(), labels.len());
                for &i in &val {
                    seen[i] += 1;
                }
                for c in 0..4 {
                    let n_c = labels.iter().filter(|&&l| l == c).count();
                    let in_fold = val.iter().filter(|&&i| labels[i] == c).count();
                    prop_assert!(in_fold == n_c / k || in_fold == n_c.div_ceil(k));
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
