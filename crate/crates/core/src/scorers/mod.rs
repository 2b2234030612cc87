//! Untrained and reference counterexample scorers. Every scorer maps one
//! example to K unnormalized scores; only the induced ranking matters.

pub mod baselines;
pub mod embedding;
pub mod two_headed;

pub use baselines::{score_distance, score_hard_negative, score_random};
pub use embedding::{embedding_score, score_embedding, CossimCache, EmbeddingModelParams};
pub use two_headed::{
    train_two_headed, two_headed_loss, two_headed_score, TwoHeadedParams, TwoHeadedTrainConfig,
};

use crate::data::store::FeatureStore;
use crate::error::Result;
use crate::oracle::{Oracle, OracleOutput, OracleQuery};
use crate::types::CxExample;

/// Run the oracle on `(candidate i, question)` for every candidate.
pub fn candidate_outputs(
    example: &CxExample,
    store: &FeatureStore,
    oracle: &Oracle,
) -> Result<Vec<OracleOutput>> {
    let q = store.question(&example.question_id)?;
    example
        .candidates
        .ids()
        .iter()
        .map(|id| {
            let v = store.image(id)?;
            oracle.vqa_eval(&OracleQuery {
                image_id: id,
                question_id: &example.question_id,
                v: v.as_slice(),
                q: q.as_slice(),
            })
        })
        .collect()
}
