use rand::seq::SliceRandom;

use super::manifest::{DatasetCounts, DatasetManifest, Split};
use crate::error::{CxError, Result};
use crate::rng;

const SPLIT_STREAM: u64 = 0x5b1d;

fn subset(split: Split, manifest: &DatasetManifest, mut idx: Vec<usize>) -> DatasetManifest {
    idx.sort_unstable();
    let examples: Vec<_> = idx
        .into_iter()
        .map(|i| manifest.examples[i].clone())
        .collect();
    let n = examples.len();
    DatasetManifest {
        split,
        counts: DatasetCounts {
            total: n,
            kept: n,
            ..Default::default()
        },
        examples,
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, SPLIT_STREAM));
    idx
}

/// Seeded disjoint split into (train, val). Each part keeps input order.
pub fn split_dataset(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CxError::InvalidArgument(format!(
            "val_fraction {val_fraction} not in (0, 1)"
        )));
    }
    let n = manifest.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut idx = shuffled(n, seed);
    let val = idx.split_off(n - n_val);
    Ok((
        subset(Split::Train, manifest, idx),
        subset(Split::Val, manifest, val),
    ))
}

/// Seeded disjoint (train, val, test) split.
pub fn split_three(
    manifest: &DatasetManifest,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && test_fraction > 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(CxError::InvalidArgument(format!(
            "val/test fractions {val_fraction}/{test_fraction} must be positive and sum below 1"
        )));
    }
    let n = manifest.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut idx = shuffled(n, seed);
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(idx.len() - n_val);
    Ok((
        subset(Split::Train, manifest, idx),
        subset(Split::Val, manifest, val),
        subset(Split::Test, manifest, test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CandidateSet, CxExample};
    use std::collections::HashSet;

    fn manifest(n: usize) -> DatasetManifest {
        let examples = (0..n)
            .map(|i| CxExample {
                image_id: format!("img{i}"),
                question_id: format!("q{i}"),
                answer_index: 0,
                candidates: CandidateSet::new(vec!["a".into(), "b".into()]).unwrap(),
                truth_index: Some(i % 2),
                truth_answer_index: None,
            })
            .collect();
        DatasetManifest::from_examples(Split::All, examples).unwrap()
    }

    #[test]
    fn split_counts_disjoint_exhaustive() {
        let m = manifest(1000);
        let (train, val) = split_dataset(&m, 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (900, 100));
        let a: HashSet<_> = train.examples.iter().map(|e| e.image_id.clone()).collect();
        let b: HashSet<_> = val.examples.iter().map(|e| e.image_id.clone()).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 1000);
    }

    #[test]
    fn split_is_seeded() {
        let m = manifest(200);
        assert_eq!(
            split_dataset(&m, 0.25, 9).unwrap(),
            split_dataset(&m, 0.25, 9).unwrap()
        );
        assert_ne!(
            split_dataset(&m, 0.25, 9).unwrap().1,
            split_dataset(&m, 0.25, 10).unwrap().1
        );
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let m = manifest(10);
        assert!(split_dataset(&m, 0.0, 1).is_err());
        assert!(split_dataset(&m, 1.0, 1).is_err());
        assert!(split_three(&m, 0.5, 0.5, 1).is_err());
    }

    #[test]
    fn three_way_split_partitions() {
        let m = manifest(100);
        let (a, b, c) = split_three(&m, 0.1, 0.3, 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 10, 30));
    }
}
