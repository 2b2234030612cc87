//! The model grid and the ablation grid.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::metrics::{rank_histogram, recall_at_k};
use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::neuralcx::{self, AblationMask, NeuralCxConfig};
use crate::oracle::{Oracle, OracleFactory, OracleMode};
use crate::rng;
use crate::scorers::{
    score_distance, score_embedding, score_hard_negative, score_random, train_two_headed,
    two_headed_score, CossimCache, EmbeddingModelParams, TwoHeadedTrainConfig,
};
use crate::types::{rank_candidates, CxExample};
use crate::vector::AnswerEmbeddingTable;

pub const THREADS_ENV: &str = "CXRANK_THREADS";
const MASK_NOISE_STREAM: u64 = 0xab1a;

/// `mask` with the noise seed every NeuralCX cell of `seed` uses.
pub fn cell_mask(mask: &AblationMask, seed: u64) -> AblationMask {
    mask.with_seed(rng::derive(seed, MASK_NOISE_STREAM))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Random,
    Distance,
    HardNegative,
    Embedding { lambda: f64 },
    TwoHeaded,
    NeuralCx,
}

impl ModelKind {
    pub fn tag(&self) -> String {
        match self {
            ModelKind::Random => "random".into(),
            ModelKind::Distance => "distance".into(),
            ModelKind::HardNegative => "hnm".into(),
            ModelKind::Embedding { lambda } if *lambda == 1.0 => "embedding".into(),
            ModelKind::Embedding { lambda } => format!("embedding_l{lambda:.2}"),
            ModelKind::TwoHeaded => "two_headed".into(),
            ModelKind::NeuralCx => "neuralcx".into(),
        }
    }

    pub fn uses_oracle(&self) -> bool {
        !matches!(self, ModelKind::Random | ModelKind::Distance)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(ModelKind::Random),
            "distance" => Ok(ModelKind::Distance),
            "hnm" | "hard_negative" => Ok(ModelKind::HardNegative),
            "embedding" => Ok(ModelKind::Embedding { lambda: 1.0 }),
            "two_headed" => Ok(ModelKind::TwoHeaded),
            "neuralcx" => Ok(ModelKind::NeuralCx),
            _ => Err(CxError::InvalidArgument(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub model: ModelKind,
    pub oracle_mode: Option<OracleMode>,
    pub mask: AblationMask,
    pub seed: u64,
}

impl ExperimentCell {
    pub fn new(model: ModelKind, oracle_mode: Option<OracleMode>, seed: u64) -> Self {
        Self {
            model,
            oracle_mode,
            mask: AblationMask::none(),
            seed,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/seed{}",
            self.model.tag(),
            self.mode_label(),
            self.mask.label(),
            self.seed
        )
    }

    fn mode_label(&self) -> String {
        self.oracle_mode.map_or("-".into(), |m| m.label().into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub model: String,
    pub oracle_mode: String,
    pub mask: String,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub n: usize,
    pub histogram: Vec<usize>,
    pub seed: u64,
    pub wallclock_s: f64,
}

impl EvalResult {
    pub fn from_positions(
        cell: &ExperimentCell,
        positions: &[usize],
        k: usize,
        wallclock_s: f64,
    ) -> Result<Self> {
        Ok(Self {
            model: cell.model.tag(),
            oracle_mode: cell.mode_label(),
            mask: cell.mask.label(),
            recall_at_1: recall_at_k(positions, 1)?,
            recall_at_5: recall_at_k(positions, 5)?,
            n: positions.len(),
            histogram: rank_histogram(positions, k)?,
            seed: cell.seed,
            wallclock_s,
        })
    }
}

/// Data and settings shared by every cell.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub store: Arc<FeatureStore>,
    pub table: AnswerEmbeddingTable,
    pub oracles: OracleFactory,
    pub train: Vec<CxExample>,
    pub val: Vec<CxExample>,
    pub test: Vec<CxExample>,
    pub neuralcx: NeuralCxConfig,
    pub two_headed: TwoHeadedTrainConfig,
    pub record_wallclock: bool,
}

impl ExperimentContext {
    fn k(&self) -> Result<usize> {
        self.test
            .first()
            .map(CxExample::k)
            .ok_or_else(|| CxError::Empty("test split".into()))
    }

    fn oracle(&self, cell: &ExperimentCell) -> Result<Oracle> {
        let mode = cell.oracle_mode.ok_or_else(|| {
            CxError::InvalidArgument(format!("{} needs an oracle mode", cell.model.tag()))
        })?;
        self.oracles.build(mode)
    }
}

/// Rank position of the truth under `score` for every example, in order.
pub fn positions_with<F>(examples: &[CxExample], mut score: F) -> Result<Vec<usize>>
where
    F: FnMut(&CxExample) -> Result<Vec<f64>>,
{
    examples
        .iter()
        .map(|ex| Ok(rank_candidates(&score(ex)?)?.position_of(ex.truth()?)))
        .collect()
}

pub fn run_cell(ctx: &ExperimentContext, cell: &ExperimentCell) -> Result<EvalResult> {
    let start = Instant::now();
    let store = &*ctx.store;
    let test = &ctx.test;
    let positions = match cell.model {
        ModelKind::Random => positions_with(test, |ex| Ok(score_random(ex, cell.seed)))?,
        ModelKind::Distance => positions_with(test, |ex| score_distance(ex, store))?,
        ModelKind::HardNegative => {
            let oracle = ctx.oracle(cell)?;
            positions_with(test, |ex| score_hard_negative(ex, store, &oracle))?
        }
        ModelKind::Embedding { lambda } => {
            let oracle = ctx.oracle(cell)?;
            let cache = CossimCache::new(&ctx.table);
            let params = EmbeddingModelParams::new(lambda)?;
            positions_with(test, |ex| {
                score_embedding(ex, store, &oracle, &cache, params)
            })?
        }
        ModelKind::TwoHeaded => {
            let mut oracle = ctx.oracle(cell)?;
            oracle.set_trainable(false)?;
            let config = TwoHeadedTrainConfig {
                seed: cell.seed,
                ..ctx.two_headed.clone()
            };
            let train = crate::data::DatasetManifest::from_examples(
                crate::data::Split::Train,
                ctx.train.clone(),
            )?;
            let params = train_two_headed(&train, store, &oracle, &ctx.table, &config)?;
            positions_with(test, |ex| {
                two_headed_score(ex, store, &oracle, &ctx.table, &params)
            })?
        }
        ModelKind::NeuralCx => {
            let mut oracle = ctx.oracle(cell)?;
            let config = NeuralCxConfig {
                seed: cell.seed,
                ..ctx.neuralcx.clone()
            };
            let mask = cell_mask(&cell.mask, cell.seed);
            let model = neuralcx::train(
                &config,
                &ctx.train,
                &ctx.val,
                store,
                &mut oracle,
                &ctx.table,
                &mask,
            )?;
            let src = neuralcx::FeatureSources {
                store,
                oracle: &oracle,
                table: &ctx.table,
            };
            neuralcx::truth_positions(&model.params, test, src, &config.feature_dims, &mask)?
        }
    };
    let wall = if ctx.record_wallclock {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    EvalResult::from_positions(cell, &positions, ctx.k()?, wall)
}

/// Worker count: `CXRANK_THREADS` when set, else the processor count.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run every cell, possibly concurrently; results come back in cell order.
/// The first failing cell (in cell order) aborts with its identity.
pub fn run_experiment(
    ctx: &ExperimentContext,
    cells: &[ExperimentCell],
) -> Result<Vec<EvalResult>> {
    let threads = thread_count().min(cells.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<EvalResult>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(ctx, &cells[i]);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .zip(cells)
        .map(|(r, cell)| {
            r.expect("every cell ran").map_err(|e| CxError::Cell {
                cell: cell.label(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// The model grid: baselines, oracle-dependent scorers, and trained rankers.
pub fn table2_cells(seed: u64, include_two_headed: bool) -> Vec<ExperimentCell> {
    use ModelKind::*;
    use OracleMode::*;
    let mut cells = vec![
        ExperimentCell::new(Random, None, seed),
        ExperimentCell::new(HardNegative, Some(Untrained), seed),
        ExperimentCell::new(HardNegative, Some(Pretrained), seed),
        ExperimentCell::new(Embedding { lambda: 1.0 }, Some(Untrained), seed),
        ExperimentCell::new(Embedding { lambda: 1.0 }, Some(Pretrained), seed),
        ExperimentCell::new(Distance, None, seed),
    ];
    if include_two_headed {
        cells.push(ExperimentCell::new(TwoHeaded, Some(Pretrained), seed));
    }
    cells.extend([
        ExperimentCell::new(NeuralCx, Some(Untrained), seed),
        ExperimentCell::new(NeuralCx, Some(Pretrained), seed),
        ExperimentCell::new(NeuralCx, Some(Trainable), seed),
    ]);
    cells
}

/// The ten masks of the reference ablation table, most disruptive first.
pub fn table3_masks() -> Vec<AblationMask> {
    [
        "V+VM+VD+Rank",
        "V",
        "VM+VD+Rank",
        "V+VM+VD+Q+A+Z",
        "Rank",
        "Q+A+Z",
        "A",
        "Q",
        "Z",
        "none",
    ]
    .iter()
    .map(|s| s.parse().expect("valid preset"))
    .collect()
}

/// One retrain per mask, sorted by recall@5 ascending (ties keep mask order).
pub fn run_ablation(
    ctx: &ExperimentContext,
    masks: &[AblationMask],
    mode: OracleMode,
    seed: u64,
) -> Result<Vec<EvalResult>> {
    let cells: Vec<ExperimentCell> = masks
        .iter()
        .map(|m| ExperimentCell {
            model: ModelKind::NeuralCx,
            oracle_mode: Some(mode),
            mask: *m,
            seed,
        })
        .collect();
    let mut results = run_experiment(ctx, &cells)?;
    results.sort_by(|a, b| a.recall_at_5.total_cmp(&b.recall_at_5));
    Ok(results)
}

/// Embedding-model recall across λ values.
pub fn lambda_sweep(
    ctx: &ExperimentContext,
    lambdas: &[f64],
    mode: OracleMode,
    seed: u64,
) -> Result<Vec<(f64, EvalResult)>> {
    let cells: Vec<ExperimentCell> = lambdas
        .iter()
        .map(|l| ExperimentCell::new(ModelKind::Embedding { lambda: *l }, Some(mode), seed))
        .collect();
    Ok(lambdas
        .iter()
        .copied()
        .zip(run_experiment(ctx, &cells)?)
        .collect())
}
