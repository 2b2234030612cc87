use rand::Rng;

use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::oracle::Oracle;
use crate::rng;
use crate::types::CxExample;
use crate::vector::l2_distance;

use super::candidate_outputs;

/// Seeded uniform scores, deterministic per (example, seed).
pub fn score_random(example: &CxExample, seed: u64) -> Vec<f64> {
    let key = rng::hash_key(&[&example.image_id, &example.question_id]);
    let mut r = rng::stream(seed, key);
    (0..example.k()).map(|_| r.random::<f64>()).collect()
}

/// Negative L2 distance between the original and each candidate.
pub fn score_distance(example: &CxExample, store: &FeatureStore) -> Result<Vec<f64>> {
    let v = store.image(&example.image_id)?;
    example
        .candidates
        .ids()
        .iter()
        .map(|id| Ok(-l2_distance(v.as_slice(), store.image(id)?.as_slice())?))
        .collect()
}

/// Negative probability of the original answer on each candidate.
pub fn score_hard_negative(
    example: &CxExample,
    store: &FeatureStore,
    oracle: &Oracle,
) -> Result<Vec<f64>> {
    let outputs = candidate_outputs(example, store, oracle)?;
    outputs
        .iter()
        .map(|o| {
            if example.answer_index >= o.answer_dist.len() {
                return Err(CxError::InvalidArgument(format!(
                    "answer index {} outside vocabulary of {}",
                    example.answer_index,
                    o.answer_dist.len()
                )));
            }
            Ok(-o.answer_dist.prob(example.answer_index))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{rank_candidates, CandidateSet};

    fn example(k: usize) -> CxExample {
        CxExample {
            image_id: "orig".into(),
            question_id: "q".into(),
            answer_index: 0,
            candidates: CandidateSet::new((0..k).map(|i| format!("c{i}")).collect()).unwrap(),
            truth_index: Some(0),
            truth_answer_index: None,
        }
    }

    #[test]
    fn random_is_seeded() {
        let ex = example(24);
        assert_eq!(score_random(&ex, 3), score_random(&ex, 3));
        assert_ne!(score_random(&ex, 3), score_random(&ex, 4));
    }

    #[test]
    fn distance_orders_by_closeness() {
        let mut store = FeatureStore::new();
        store.insert_image("orig", &[0.0, 0.0]).unwrap();
        store.insert_image("c0", &[3.0, 0.0]).unwrap();
        store.insert_image("c1", &[0.0, 1.0]).unwrap();
        store.insert_image("c2", &[2.0, 0.0]).unwrap();
        let s = score_distance(&example(3), &store).unwrap();
        assert_eq!(rank_candidates(&s).unwrap().permutation(), &[1, 2, 0]);

        store.insert_image("c3", &[0.0, 0.0]).unwrap();
        let s = score_distance(&example(4), &store).unwrap();
        assert_eq!(rank_candidates(&s).unwrap().permutation()[0], 3);
    }

    #[test]
    fn distance_needs_features() {
        let store = FeatureStore::new();
        assert!(matches!(
            score_distance(&example(2), &store),
            Err(CxError::Missing(_))
        ));
    }

    #[test]
    fn hard_negative_ranks_by_negative_probability() {
        use crate::oracle::make_table_oracle;
        use crate::vector::AnswerDistribution;
        use std::sync::Arc;

        let mut store = FeatureStore::new();
        store.insert_question("q", &[1.0]).unwrap();
        for (i, p) in [0.9, 0.1, 0.5].into_iter().enumerate() {
            let id = format!("c{i}");
            store.insert_image(&id, &[0.0]).unwrap();
            let d = AnswerDistribution::new(vec![p, 1.0 - p]).unwrap();
            store.insert_oracle_output(&id, "q", &d, &[0.0]).unwrap();
        }
        let oracle = make_table_oracle(Arc::new(store.clone()));
        let s = score_hard_negative(&example(3), &store, &oracle).unwrap();
        assert_eq!(rank_candidates(&s).unwrap().permutation(), &[1, 2, 0]);

        let mut flat = FeatureStore::new();
        flat.insert_question("q", &[1.0]).unwrap();
        for i in 0..3 {
            let id = format!("c{i}");
            flat.insert_image(&id, &[0.0]).unwrap();
            flat.insert_oracle_output(
                &id,
                "q",
                &AnswerDistribution::new(vec![0.5, 0.5]).unwrap(),
                &[0.0],
            )
            .unwrap();
        }
        let oracle = make_table_oracle(Arc::new(flat.clone()));
        let s = score_hard_negative(&example(3), &flat, &oracle).unwrap();
        assert_eq!(rank_candidates(&s).unwrap().permutation(), &[0, 1, 2]);
    }
}
