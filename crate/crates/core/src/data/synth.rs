use super::encode::DatasetTable;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gaussian blobs with unit variance. Sample `i` belongs to class
/// `i % classes`. The features are cut into `classes` contiguous blocks and
/// class `c` sits at `separation` on every feature of block `c`, zero
/// elsewhere. With fewer features than classes, class `c` uses axis
/// `c % features` instead, the sign flipping on every further wrap.
/// Class 0 is named `normal`, so binary metrics treat it as benign.
pub fn synth_dataset(classes: usize, samples: usize, features: usize, separation: f64, seed: u64) -> Result<DatasetTable> {
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::InvalidArgument(format!("separation must be positive, got {separation}")));
    }
    if classes < 2 || samples == 0 || features == 0 {
        return Err(Error::InvalidArgument(format!(
            "need classes >= 2, samples >= 1, features >= 1 (got {classes}, {samples}, {features})"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(samples * features);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        let sign = if (c / features).is_multiple_of(2) { 1.0 } else { -1.0 };
        for j in 0..features {
            let hit = if features >= classes { j * classes / features == c } else { j == c % features };
            let centre = if hit { sign * separation } else { 0.0 };
            data.push(centre + rng.normal());
        }
        labels.push(c);
    }
    let columns = (0..features).map(|j| format!("f{j}")).collect();
    let class_names = (0..classes)
        .map(|c| match (c, classes) {
            (0, _) => "normal".to_owned(),
            (_, 2) => "attack".to_owned(),
            _ => format!("attack{c}"),
        })
        .collect();
    DatasetTable::new(Tensor::from_vec(&[samples, features], data)?, labels, columns, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(t: &DatasetTable) -> f64 {
        let w = t.width();
        let k = t.num_classes();
        let mut centroids = vec![vec![0.0; w]; k];
        let counts = t.class_counts();
        for (row, &l) in t.features.data().chunks_exact(w).zip(&t.labels) {
            for (c, x) in centroids[l].iter_mut().zip(row) {
                *c += x / counts[l] as f64;
            }
        }
        let correct = t
            .features
            .data()
            .chunks_exact(w)
            .zip(&t.labels)
            .filter(|(row, &l)| {
                let dist = |c: &Vec<f64>| c.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))) == Some(l)
            })
            .count();
        correct as f64 / t.rows() as f64
    }

    #[test]
    fn well_separated_blobs_are_linearly_separable() {
        let t = synth_dataset(2, 64, 16, 10.0, 5).unwrap();
        assert_eq!(nearest_centroid_accuracy(&t), 1.0);
    }

    #[test]
    fn deterministic_and_covers_classes() {
        assert_eq!(synth_dataset(5, 100, 8, 3.0, 9).unwrap(), synth_dataset(5, 100, 8, 3.0, 9).unwrap());
        let t = synth_dataset(5, 100, 8, 3.0, 9).unwrap();
        assert!(t.class_counts().iter().all(|&c| c == 20));
        assert!(synth_dataset(2, 10, 4, 0.0, 0).is_err());
    }
}
