//! The unsupervised embedding model:
//!
//! `S(I') = λ Σ_{a≠A} cossim(a, A) P(a|I',Q) − (1−λ) ln P(A|I',Q)`
//!
//! Probabilities are clamped at [`PROB_EPSILON`] before the logarithm.

use std::sync::OnceLock;

use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::oracle::Oracle;
use crate::types::CxExample;
use crate::vector::AnswerEmbeddingTable;

use super::candidate_outputs;

pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingModelParams {
    lambda: f64,
}

impl EmbeddingModelParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CxError::InvalidArgument(format!(
                "lambda {lambda} not in [0, 1]"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for EmbeddingModelParams {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// Lazily computed `cossim(·, A)` rows, one per distinct original answer.
#[derive(Debug)]
pub struct CossimCache<'a> {
    table: &'a AnswerEmbeddingTable,
    rows: Vec<OnceLock<Vec<f64>>>,
}

impl<'a> CossimCache<'a> {
    pub fn new(table: &'a AnswerEmbeddingTable) -> Self {
        Self {
            table,
            rows: (0..table.n_answers()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn row(&self, answer: usize) -> Result<&[f64]> {
        let slot = self.rows.get(answer).ok_or_else(|| {
            CxError::InvalidArgument(format!(
                "answer {answer} outside vocabulary of {}",
                self.rows.len()
            ))
        })?;
        Ok(slot.get_or_init(|| self.table.cossim_row(answer)))
    }

    pub fn table(&self) -> &AnswerEmbeddingTable {
        self.table
    }
}

/// One candidate's score from its answer distribution.
pub fn embedding_score(
    probs: &[f64],
    answer: usize,
    cossim: &[f64],
    params: EmbeddingModelParams,
) -> f64 {
    let lambda = params.lambda;
    let similar: f64 = probs
        .iter()
        .zip(cossim)
        .enumerate()
        .filter(|(a, _)| *a != answer)
        .map(|(_, (p, c))| c * p)
        .sum();
    let repeat = if lambda < 1.0 {
        -(probs[answer].max(PROB_EPSILON)).ln()
    } else {
        0.0
    };
    lambda * similar + (1.0 - lambda) * repeat
}

pub fn score_embedding(
    example: &CxExample,
    store: &FeatureStore,
    oracle: &Oracle,
    cache: &CossimCache<'_>,
    params: EmbeddingModelParams,
) -> Result<Vec<f64>> {
    let cossim = cache.row(example.answer_index)?;
    let outputs = candidate_outputs(example, store, oracle)?;
    outputs
        .iter()
        .map(|o| {
            if o.answer_dist.len() != cossim.len() {
                return Err(CxError::DimensionMismatch {
                    expected: cossim.len(),
                    got: o.answer_dist.len(),
                });
            }
            Ok(embedding_score(
                o.answer_dist.probs(),
                example.answer_index,
                cossim,
                params,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lam(l: f64) -> EmbeddingModelParams {
        EmbeddingModelParams::new(l).unwrap()
    }

    #[test]
    fn hand_computed_examples() {
        // A = a0; cossim(a1, A) = 0.5, cossim(a2, A) = -0.2.
        let cs = [1.0, 0.5, -0.2];
        let s = embedding_score(&[0.2, 0.5, 0.3], 0, &cs, lam(1.0));
        assert!((s - 0.19).abs() < 1e-9);
        let s = embedding_score(&[0.2, 0.5, 0.3], 0, &cs, lam(0.0));
        assert!((s - 1.6094379124341003).abs() < 1e-9);
        let s = embedding_score(&[1.0, 0.0, 0.0], 0, &cs, lam(1.0));
        assert_eq!(s, 0.0);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let s = embedding_score(&[0.0, 1.0], 0, &[1.0, 0.3], lam(0.0));
        assert!((s - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(s.is_finite());
    }

    #[test]
    fn lambda_validated() {
        assert!(EmbeddingModelParams::new(1.5).is_err());
        assert!(EmbeddingModelParams::new(-0.1).is_err());
    }

    #[test]
    fn cache_rows_match_table() {
        let t = AnswerEmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]])
            .unwrap();
        let c = CossimCache::new(&t);
        let r = c.row(0).unwrap();
        assert!((r[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(r[2].abs() < 1e-12);
        assert!(c.row(3).is_err());
    }

    proptest! {
        #[test]
        fn lambda_one_ignores_original_answer_mass(
            rest in prop::collection::vec(0.01f64..1.0, 4),
            a_mass in 0.0f64..0.9,
            cs in prop::collection::vec(-1.0f64..1.0, 5),
        ) {
            let z: f64 = rest.iter().sum();
            let mut p1 = vec![a_mass];
            p1.extend(rest.iter().map(|r| r / z * (1.0 - a_mass)));
            // Same masses on a != A, different mass on A (unnormalized is fine for the sum).
            let mut p2 = p1.clone();
            p2[0] = 0.5 * a_mass;
            let s1 = embedding_score(&p1, 0, &cs, lam(1.0));
            let s2 = embedding_score(&p2, 0, &cs, lam(1.0));
            prop_assert!((s1 - s2).abs() < 1e-12);
        }

        #[test]
        fn row_scaling_leaves_scores_unchanged(
            rows in prop::collection::vec(prop::collection::vec(0.1f64..2.0, 3), 4),
            scales in prop::collection::vec(0.1f64..10.0, 4),
            probs in prop::collection::vec(0.01f64..1.0, 4),
        ) {
            let z: f64 = probs.iter().sum();
            let probs: Vec<f64> = probs.iter().map(|p| p / z).collect();
            let t1 = AnswerEmbeddingTable::from_rows(&rows).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
            let t2 = AnswerEmbeddingTable::from_rows(&scaled).unwrap();
            let s1 = embedding_score(&probs, 1, &t1.cossim_row(1), lam(1.0));
            let s2 = embedding_score(&probs, 1, &t2.cossim_row(1), lam(1.0));
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
