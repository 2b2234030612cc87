//! The supervised counterexample ranker: feature assembly, a ReLU network
//! scored independently per candidate, and listwise cross-entropy training.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod loss;
pub mod mlp;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use config::NeuralCxConfig;
pub use features::{
    assemble_example, assemble_features, assemble_with, oracle_features, AblationMask, Feature,
    FeatureAssembly, FeatureDims, FeatureSources, OracleFeatures,
};
pub use loss::{candidate_loss, candidate_loss_grad};
pub use mlp::MlpParams;
pub use train::{
    log_to_csv, score_example, train, truth_positions, truth_positions_with, EpochLog, Mlp,
    TrainedModel,
};
