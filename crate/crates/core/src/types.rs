//! Task-instance types: candidate sets, examples, and scored rankings.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CxError, Result};
use crate::real::Real;

/// Number of nearest-neighbor candidates per example in VQA 2.0.
pub const DEFAULT_K: usize = 24;

/// Candidate image ids in nearest-neighbor order (index 0 is closest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CandidateSet {
    ids: Vec<String>,
}

impl CandidateSet {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(CxError::InvalidArgument("candidate set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(CxError::InvalidArgument(format!(
                    "duplicate candidate id {id:?}"
                )));
            }
        }
        Ok(Self { ids })
    }

    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|c| c == id)
    }
}

impl TryFrom<Vec<String>> for CandidateSet {
    type Error = CxError;
    fn try_from(ids: Vec<String>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<CandidateSet> for Vec<String> {
    fn from(c: CandidateSet) -> Self {
        c.ids
    }
}

/// One counterexample-prediction instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CxExample {
    pub image_id: String,
    pub question_id: String,
    pub answer_index: usize,
    pub candidates: CandidateSet,
    pub truth_index: Option<usize>,
    pub truth_answer_index: Option<usize>,
}

impl CxExample {
    pub fn k(&self) -> usize {
        self.candidates.k()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.truth_index {
            if t >= self.k() {
                return Err(CxError::InvalidArgument(format!(
                    "truth index {t} out of range for K={}",
                    self.k()
                )));
            }
        }
        Ok(())
    }

    /// Truth index, or an error for unlabeled examples.
    pub fn truth(&self) -> Result<usize> {
        self.truth_index.ok_or_else(|| {
            CxError::Missing(format!(
                "example {}/{} has no truth",
                self.image_id, self.question_id
            ))
        })
    }
}

/// K candidate scores plus their descending-score permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRanking {
    scores: Vec<f64>,
    permutation: Vec<usize>,
}

impl ScoredRanking {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn k(&self) -> usize {
        self.scores.len()
    }

    /// Position (0 = top) at which `candidate` was ranked.
    pub fn position_of(&self, candidate: usize) -> usize {
        self.permutation
            .iter()
            .position(|&c| c == candidate)
            .expect("permutation covers every candidate")
    }
}

/// Sort candidates by descending score; equal scores keep ascending index.
pub fn rank_candidates<T: Real>(scores: &[T]) -> Result<ScoredRanking> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(CxError::NonFinite(format!("score {i} is NaN")));
    }
    let scores: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    let mut permutation: Vec<usize> = (0..scores.len()).collect();
    // Stable sort preserves ascending index among ties.
    permutation.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    Ok(ScoredRanking {
        scores,
        permutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Selection-sort oracle: repeatedly take the max, lowest index first.
    fn selection_oracle(scores: &[f64]) -> Vec<usize> {
        let mut left: Vec<usize> = (0..scores.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for j in 1..left.len() {
                if scores[left[j]] > scores[left[best]] {
                    best = j;
                }
            }
            out.push(left.remove(best));
        }
        out
    }

    #[test]
    fn rank_examples() {
        assert_eq!(
            rank_candidates(&[0.1, 0.9, 0.5]).unwrap().permutation(),
            &[1, 2, 0]
        );
        assert_eq!(
            rank_candidates(&[0.5, 0.5, 0.5]).unwrap().permutation(),
            &[0, 1, 2]
        );
        assert!(rank_candidates(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn candidate_set_rejects_duplicates() {
        assert!(CandidateSet::new(vec!["a".into(), "b".into(), "a".into()]).is_err());
        let c = CandidateSet::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(c.position("b"), Some(1));
        assert_eq!(c.position("z"), None);
    }

    #[test]
    fn example_truth_range() {
        let ex = CxExample {
            image_id: "i".into(),
            question_id: "q".into(),
            answer_index: 0,
            candidates: CandidateSet::new(vec!["a".into(), "b".into()]).unwrap(),
            truth_index: Some(2),
            truth_answer_index: None,
        };
        assert!(ex.validate().is_err());
    }

    proptest! {
        #[test]
        fn matches_selection_oracle(scores in prop::collection::vec(
            prop_oneof![Just(0.0f64), Just(1.0), -5.0f64..5.0], 1..30)) {
            let r = rank_candidates(&scores).unwrap();
            prop_assert_eq!(r.permutation().to_vec(), selection_oracle(&scores));
            for w in r.permutation().windows(2) {
                let (a, b) = (scores[w[0]], scores[w[1]]);
                prop_assert!(a > b || (a == b && w[0] < w[1]));
            }
        }

        #[test]
        fn shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 1..30), c in -3.0f64..3.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            // Shifting can merge near-equal scores through rounding; only compare
            // when no two scores are that close.
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
            prop_assert_eq!(
                rank_candidates(&scores).unwrap().permutation().to_vec(),
                rank_candidates(&shifted).unwrap().permutation().to_vec()
            );
        }

        #[test]
        fn strictly_decreasing_is_identity(n in 1usize..40) {
            let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
            prop_assert_eq!(rank_candidates(&scores).unwrap().permutation().to_vec(), (0..n).collect::<Vec<_>>());
        }
    }
}
