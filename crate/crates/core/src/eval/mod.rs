//! Metrics, experiment grids, and report emission.

pub mod experiment;
pub mod fixtures;
pub mod metrics;
pub mod report;

pub use experiment::{
    lambda_sweep, run_ablation, run_cell, run_experiment, table2_cells, table3_masks, EvalResult,
    ExperimentCell, ExperimentContext, ModelKind,
};
pub use fixtures::{ReferenceFixture, ABLATION_REFERENCE, RESULTS_REFERENCE};
pub use metrics::{rank_histogram, recall_at_k};
pub use report::{emit_report, lambda_csv, results_csv, text_table};
