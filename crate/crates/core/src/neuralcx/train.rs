//! Minibatch training with early stopping on validation recall@5.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use super::adam::{AdamConfig, AdamState};
use super::config::NeuralCxConfig;
use super::features::{
    assemble_example, assemble_with, oracle_features, AblationMask, ExampleFeatures, Feature,
    FeatureDims, FeatureSources, OracleFeatures,
};
use super::loss::candidate_loss_grad;
use super::mlp::MlpParams;
use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::eval::metrics::recall_at_k;
use crate::oracle::{Oracle, ProjectionParams};
use crate::rng;
use crate::types::{rank_candidates, CxExample, ScoredRanking};
use crate::vector::AnswerEmbeddingTable;

pub type Mlp = MlpParams<f64>;

const SCORE_CHUNK: usize = 64;
pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_recall@1,val_recall@5,wallclock_s";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_recall_at_1: f64,
    pub val_recall_at_5: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: NeuralCxConfig,
    pub mask: AblationMask,
    pub params: Mlp,
    /// Oracle weights at the best epoch, when the oracle was trained jointly.
    pub oracle_params: Option<ProjectionParams>,
    pub adam: AdamState<f64>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in log {
        let _ = writeln!(
            out,
            "{},{:.6},{:.2},{:.2},{:.3}",
            r.epoch, r.train_loss, r.val_recall_at_1, r.val_recall_at_5, r.wallclock_s
        );
    }
    out
}

/// Scores for every candidate of `example`, dropout off.
pub fn score_candidates(
    params: &Mlp,
    example: &CxExample,
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<Vec<f64>> {
    let f = assemble_example(example, src, dims, mask)?;
    Ok(params.forward_batch(f.rows.view(), None)?.0.to_vec())
}

pub fn score_example(
    params: &Mlp,
    example: &CxExample,
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<ScoredRanking> {
    rank_candidates(&score_candidates(params, example, src, dims, mask)?)
}

/// 0-based rank of the ground truth for each example, scored in chunks.
pub fn truth_positions(
    params: &Mlp,
    examples: &[CxExample],
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<Vec<usize>> {
    truth_positions_with(params, examples, src, dims, mask, None)
}

/// As [`truth_positions`], reading oracle outputs from `pre` (one entry
/// per example) when given.
pub fn truth_positions_with(
    params: &Mlp,
    examples: &[CxExample],
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
    pre: Option<&[OracleFeatures]>,
) -> Result<Vec<usize>> {
    if let Some(pre) = pre {
        if pre.len() != examples.len() {
            return Err(CxError::DimensionMismatch {
                expected: examples.len(),
                got: pre.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(examples.len());
    for (c, chunk) in examples.chunks(SCORE_CHUNK).enumerate() {
        let feats: Vec<ExampleFeatures> = chunk
            .iter()
            .enumerate()
            .map(|(j, ex)| assemble_with(ex, src, dims, mask, pre.map(|p| &p[c * SCORE_CHUNK + j])))
            .collect::<Result<_>>()?;
        let x = stack(&feats, dims)?;
        let (scores, _) = params.forward_batch(x.view(), None)?;
        for (b, ex) in chunk.iter().enumerate() {
            let s = scores.slice(s![b * dims.k..(b + 1) * dims.k]);
            let ranking = rank_candidates(s.as_slice().expect("contiguous"))?;
            out.push(ranking.position_of(ex.truth()?));
        }
    }
    Ok(out)
}

fn stack(feats: &[ExampleFeatures], dims: &FeatureDims) -> Result<Array2<f64>> {
    let views: Vec<_> = feats.iter().map(|f| f.rows.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|_| CxError::DimensionMismatch {
        expected: dims.total(),
        got: 0,
    })
}

/// Candidate-dimension gradients flowing back into the oracle.
fn oracle_backprop(
    oracle: &Oracle,
    feats: &[ExampleFeatures],
    d_x: &Array2<f64>,
    dims: &FeatureDims,
    mask: &AblationMask,
    table: &AnswerEmbeddingTable,
    grads: &mut ProjectionParams,
) -> Result<()> {
    let k = dims.k;
    let span = |f: Feature| dims.offset(f)..dims.offset(f) + dims.width(f);
    let n_answers = table.n_answers();
    for (b, f) in feats.iter().enumerate() {
        let (orig, cands) = f
            .caches
            .as_ref()
            .ok_or_else(|| CxError::NotTrainable("missing oracle caches".into()))?;
        let block = d_x.slice(s![b * k..(b + 1) * k, ..]);
        for (i, cache) in cands.iter().enumerate() {
            let row = block.row(i);
            let d_z = if mask.is_masked(Feature::ZPrime) {
                Array1::zeros(dims.z)
            } else {
                row.slice(s![span(Feature::ZPrime)]).to_owned()
            };
            let d_probs = if mask.is_masked(Feature::APrime) {
                Array1::zeros(n_answers)
            } else {
                table.rows().dot(&row.slice(s![span(Feature::APrime)]))
            };
            oracle.backprop(
                cache,
                d_z.as_slice().unwrap(),
                d_probs.as_slice().unwrap(),
                grads,
            )?;
        }
        if !mask.is_masked(Feature::Z) {
            let d_z = block.slice(s![.., span(Feature::Z)]).sum_axis(Axis(0));
            oracle.backprop(orig, d_z.as_slice().unwrap(), &vec![0.0; n_answers], grads)?;
        }
    }
    Ok(())
}

/// Mean loss of one batch and its gradient, accumulated into `grads`.
fn batch_step(
    params: &Mlp,
    feats: &[ExampleFeatures],
    truths: &[usize],
    dims: &FeatureDims,
    dropout: Option<(f64, &mut rand_chacha::ChaCha8Rng)>,
    grads: &mut Mlp,
    want_input_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let x = stack(feats, dims)?;
    let (scores, cache) = params.forward_batch(x.view(), dropout)?;
    let n = feats.len() as f64;
    let mut d_scores = Array1::<f64>::zeros(scores.len());
    let mut loss = 0.0;
    for (b, &t) in truths.iter().enumerate() {
        let r = b * dims.k..(b + 1) * dims.k;
        let (l, g) = candidate_loss_grad(
            scores.slice(s![r.clone()]).as_slice().expect("contiguous"),
            t,
        );
        loss += l;
        d_scores
            .slice_mut(s![r])
            .iter_mut()
            .zip(g)
            .for_each(|(d, g)| *d = g / n);
    }
    let d_x = params.backward(&cache, d_scores.view(), grads, want_input_grad)?;
    Ok((loss / n, d_x))
}

/// Mean loss and gradient over `examples` without dropout. When the
/// oracle is trainable the gradient with respect to its weights is
/// returned too.
pub fn loss_and_gradient(
    params: &Mlp,
    examples: &[CxExample],
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<(f64, Mlp, Option<ProjectionParams>)> {
    if examples.is_empty() {
        return Err(CxError::Empty("gradient batch".into()));
    }
    let feats: Vec<_> = examples
        .iter()
        .map(|e| assemble_example(e, src, dims, mask))
        .collect::<Result<_>>()?;
    let truths: Vec<usize> = examples
        .iter()
        .map(CxExample::truth)
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    let trainable = src.oracle.is_trainable();
    let (loss, d_x) = batch_step(params, &feats, &truths, dims, None, &mut grads, trainable)?;
    let oracle_grads = match (d_x, src.oracle.params()) {
        (Some(d_x), Some(p)) => {
            let mut og = p.zeros_like();
            oracle_backprop(src.oracle, &feats, &d_x, dims, mask, src.table, &mut og)?;
            Some(og)
        }
        _ => None,
    };
    Ok((loss, grads, oracle_grads))
}

/// Train a ranker on `train`, selecting the epoch with the best recall@5
/// on `val`. A trainable `oracle` is updated jointly and left holding the
/// weights of the selected epoch.
pub fn train(
    config: &NeuralCxConfig,
    train: &[CxExample],
    val: &[CxExample],
    store: &FeatureStore,
    oracle: &mut Oracle,
    table: &AnswerEmbeddingTable,
    mask: &AblationMask,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(CxError::Empty("training split".into()));
    }
    if val.is_empty() {
        return Err(CxError::Empty("validation split".into()));
    }
    let truths: Vec<usize> = train.iter().map(CxExample::truth).collect::<Result<_>>()?;
    for ex in val {
        ex.truth()?;
    }
    let dims = config.feature_dims;
    let inferred = FeatureDims::infer(store, table, oracle, train[0].k());
    if inferred != dims {
        return Err(CxError::InvalidArgument(format!(
            "configured feature dims {dims:?} do not match the data {inferred:?}"
        )));
    }
    let trainable = oracle.is_trainable();
    let start = Instant::now();
    let (train_pre, val_pre) = if trainable {
        (None, None)
    } else {
        let src = FeatureSources {
            store,
            oracle,
            table,
        };
        let run = |xs: &[CxExample]| {
            xs.iter()
                .map(|e| oracle_features(e, src))
                .collect::<Result<Vec<_>>>()
        };
        (Some(run(train)?), Some(run(val)?))
    };
    let adam_cfg = AdamConfig::with_lr(config.learning_rate);
    let mut params = Mlp::init(
        dims.total(),
        config.n_layers,
        config.hidden_units,
        config.seed,
    )?;
    let mut adam = AdamState::zeros(&params.sizes());
    let mut oracle_adam = oracle.params().map(|p| AdamState::<f64>::zeros(&p.sizes()));

    let mut best = (
        f64::NEG_INFINITY,
        0usize,
        params.clone(),
        oracle.params().cloned(),
        adam.clone(),
    );
    let mut stale = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng::stream(config.seed, 0x5_0000 + epoch as u64));
        let mut total = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let mut drop_rng = rng::stream(rng::derive(config.seed, epoch as u64), bi as u64);
            let src = FeatureSources {
                store,
                oracle,
                table,
            };
            let feats: Vec<_> = batch
                .iter()
                .map(|&i| {
                    assemble_with(
                        &train[i],
                        src,
                        &dims,
                        mask,
                        train_pre.as_ref().map(|p| &p[i]),
                    )
                })
                .collect::<Result<_>>()?;
            let bt: Vec<usize> = batch.iter().map(|&i| truths[i]).collect();
            let mut grads = params.zeros_like();
            let (loss, d_x) = batch_step(
                &params,
                &feats,
                &bt,
                &dims,
                Some((config.dropout_p, &mut drop_rng)),
                &mut grads,
                trainable,
            )?;
            total += loss * batch.len() as f64;
            adam.step(&adam_cfg, &mut params.tensors_mut(), &grads.tensors());
            if let (Some(d_x), Some(state)) = (d_x, oracle_adam.as_mut()) {
                let mut og = oracle.params().expect("parametric oracle").zeros_like();
                oracle_backprop(oracle, &feats, &d_x, &dims, mask, table, &mut og)?;
                let og: Vec<&[f64]> = og.tensors().to_vec();
                let p = oracle.params_mut().expect("parametric oracle");
                state.step(&adam_cfg, &mut p.tensors_mut(), &og);
            }
        }
        let src = FeatureSources {
            store,
            oracle,
            table,
        };
        let pos = truth_positions_with(&params, val, src, &dims, mask, val_pre.as_deref())?;
        let r1 = recall_at_k(&pos, 1)?;
        let r5 = recall_at_k(&pos, 5)?;
        log.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_recall_at_1: r1,
            val_recall_at_5: r5,
            wallclock_s: if config.record_wallclock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if r5 > best.0 {
            best = (
                r5,
                epoch,
                params.clone(),
                oracle.params().cloned(),
                adam.clone(),
            );
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params, oracle_params, adam) = best;
    let oracle_params = if trainable {
        if let (Some(dst), Some(src)) = (oracle.params_mut(), oracle_params.as_ref()) {
            *dst = src.clone();
        }
        oracle_params
    } else {
        None
    };
    Ok(TrainedModel {
        config: config.clone(),
        mask: *mask,
        params,
        oracle_params,
        adam,
        best_epoch,
        log,
    })
}

/// Scores of a single assembled row, for inspection.
pub fn score_row(params: &Mlp, row: ArrayView1<'_, f64>) -> Result<f64> {
    params.forward(row.as_slice().expect("contiguous"), None)
}
