//! Reference two-headed counterexample model.
//!
//! The explaining head scores candidate `i` by the alignment of projected
//! multimodal and answer embeddings,
//! `raw_i = (W_zd z_i + b_zd) · (W_ad a + b_ad)`, then mixes the K raw scores
//! through a biased K×K affine layer. Training minimizes
//! `−ln P(A|I,Q) + λ Σ_{i≠*} max(0, M − (S* − S_i))`; the shared base is the
//! (frozen) oracle, so only the hinge term moves the head's parameters.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::PROB_EPSILON;
use crate::data::manifest::DatasetManifest;
use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::neuralcx::adam::{AdamConfig, AdamState};
use crate::oracle::{Oracle, OracleQuery};
use crate::rng;
use crate::types::CxExample;
use crate::vector::{AnswerDistribution, AnswerEmbeddingTable};

use super::candidate_outputs;

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_JOINT_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadedParams {
    pub w_zd: Array2<f64>,
    pub b_zd: Array1<f64>,
    pub w_ad: Array2<f64>,
    pub b_ad: Array1<f64>,
    pub w_kk: Array2<f64>,
    pub b_kk: Array1<f64>,
    pub margin: f64,
    pub lambda_joint: f64,
}

impl TwoHeadedParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_zd: Array2<f64>,
        b_zd: Array1<f64>,
        w_ad: Array2<f64>,
        b_ad: Array1<f64>,
        w_kk: Array2<f64>,
        b_kk: Array1<f64>,
        margin: f64,
        lambda_joint: f64,
    ) -> Result<Self> {
        let d = w_zd.nrows();
        let k = w_kk.nrows();
        if b_zd.len() != d || w_ad.nrows() != d || b_ad.len() != d {
            return Err(CxError::InvalidArgument(
                "projection output dims must all equal d".into(),
            ));
        }
        if w_kk.ncols() != k || b_kk.len() != k {
            return Err(CxError::InvalidArgument(
                "output layer must be K×K with K biases".into(),
            ));
        }
        if !(margin > 0.0 && lambda_joint >= 0.0) {
            return Err(CxError::InvalidArgument(format!(
                "margin {margin} must be > 0, weight {lambda_joint} >= 0"
            )));
        }
        Ok(Self {
            w_zd,
            b_zd,
            w_ad,
            b_ad,
            w_kk,
            b_kk,
            margin,
            lambda_joint,
        })
    }

    /// Uniform ±1/√fan_in projections, identity output layer.
    pub fn init(seed: u64, z_dim: usize, emb_dim: usize, d: usize, k: usize) -> Self {
        let mut r = rng::stream(seed, 0x2_4ead);
        let mut init = |rows: usize, cols: usize| {
            let b = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| r.random_range(-b..b))
        };
        Self {
            w_zd: init(d, z_dim),
            b_zd: Array1::zeros(d),
            w_ad: init(d, emb_dim),
            b_ad: Array1::zeros(d),
            w_kk: Array2::eye(k),
            b_kk: Array1::zeros(k),
            margin: DEFAULT_MARGIN,
            lambda_joint: DEFAULT_JOINT_WEIGHT,
        }
    }

    pub fn d(&self) -> usize {
        self.w_zd.nrows()
    }

    pub fn k(&self) -> usize {
        self.w_kk.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            w_zd: Array2::zeros(self.w_zd.raw_dim()),
            b_zd: Array1::zeros(self.b_zd.len()),
            w_ad: Array2::zeros(self.w_ad.raw_dim()),
            b_ad: Array1::zeros(self.b_ad.len()),
            w_kk: Array2::zeros(self.w_kk.raw_dim()),
            b_kk: Array1::zeros(self.b_kk.len()),
            ..*self
        }
    }

    fn sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w_zd.as_slice().unwrap(),
            self.b_zd.as_slice().unwrap(),
            self.w_ad.as_slice().unwrap(),
            self.b_ad.as_slice().unwrap(),
            self.w_kk.as_slice().unwrap(),
            self.b_kk.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_zd.as_slice_mut().unwrap(),
            self.b_zd.as_slice_mut().unwrap(),
            self.w_ad.as_slice_mut().unwrap(),
            self.b_ad.as_slice_mut().unwrap(),
            self.w_kk.as_slice_mut().unwrap(),
            self.b_kk.as_slice_mut().unwrap(),
        ]
    }
}

struct Forward {
    proj_z: Array2<f64>,
    proj_a: Array1<f64>,
    raw: Array1<f64>,
    out: Array1<f64>,
}

/// `zs` holds one row per candidate.
fn forward(
    params: &TwoHeadedParams,
    zs: &Array2<f64>,
    a_emb: ArrayView1<'_, f64>,
) -> Result<Forward> {
    if zs.nrows() != params.k() {
        return Err(CxError::DimensionMismatch {
            expected: params.k(),
            got: zs.nrows(),
        });
    }
    if zs.ncols() != params.w_zd.ncols() {
        return Err(CxError::DimensionMismatch {
            expected: params.w_zd.ncols(),
            got: zs.ncols(),
        });
    }
    if a_emb.len() != params.w_ad.ncols() {
        return Err(CxError::DimensionMismatch {
            expected: params.w_ad.ncols(),
            got: a_emb.len(),
        });
    }
    let proj_z = zs.dot(&params.w_zd.t()) + &params.b_zd;
    let proj_a = params.w_ad.dot(&a_emb) + &params.b_ad;
    let raw = proj_z.dot(&proj_a);
    let out = params.w_kk.dot(&raw) + &params.b_kk;
    Ok(Forward {
        proj_z,
        proj_a,
        raw,
        out,
    })
}

/// Scores from precomputed candidate embeddings and the answer embedding.
pub fn two_headed_forward(
    params: &TwoHeadedParams,
    zs: &Array2<f64>,
    a_emb: ArrayView1<'_, f64>,
) -> Result<Vec<f64>> {
    Ok(forward(params, zs, a_emb)?.out.to_vec())
}

fn candidate_zs(example: &CxExample, store: &FeatureStore, oracle: &Oracle) -> Result<Array2<f64>> {
    let outs = candidate_outputs(example, store, oracle)?;
    let zd = outs.first().map_or(0, |o| o.z.dim());
    let flat: Vec<f64> = outs.iter().flat_map(|o| o.z.as_slice().to_vec()).collect();
    Array2::from_shape_vec((outs.len(), zd), flat)
        .map_err(|e| CxError::InvalidArgument(e.to_string()))
}

pub fn two_headed_score(
    example: &CxExample,
    store: &FeatureStore,
    oracle: &Oracle,
    table: &AnswerEmbeddingTable,
    params: &TwoHeadedParams,
) -> Result<Vec<f64>> {
    let zs = candidate_zs(example, store, oracle)?;
    if example.answer_index >= table.n_answers() {
        return Err(CxError::InvalidArgument(format!(
            "answer index {} outside table",
            example.answer_index
        )));
    }
    two_headed_forward(params, &zs, table.row(example.answer_index))
}

/// Unweighted pairwise hinge sum `Σ_{i≠*} max(0, M − (S* − S_i))`.
pub fn hinge_sum(scores: &[f64], truth: usize, margin: f64) -> f64 {
    scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != truth)
        .map(|(_, s)| (margin - (scores[truth] - s)).max(0.0))
        .sum()
}

/// Joint loss: answer cross-entropy plus λ-weighted hinge sum.
pub fn two_headed_loss(
    scores: &[f64],
    truth_index: usize,
    answer_dist: &AnswerDistribution,
    answer_index: usize,
    params: &TwoHeadedParams,
) -> f64 {
    let answer_term = -answer_dist.prob(answer_index).max(PROB_EPSILON).ln();
    answer_term + params.lambda_joint * hinge_sum(scores, truth_index, params.margin)
}

/// Hinge-term loss and its gradient for one example.
fn hinge_backward(
    params: &TwoHeadedParams,
    zs: &Array2<f64>,
    a_emb: ArrayView1<'_, f64>,
    truth: usize,
    grads: &mut TwoHeadedParams,
) -> Result<f64> {
    let f = forward(params, zs, a_emb)?;
    let s = f.out.as_slice().unwrap();
    let lambda = params.lambda_joint;
    let mut d_out = Array1::<f64>::zeros(params.k());
    let mut loss = 0.0;
    for i in 0..params.k() {
        if i == truth {
            continue;
        }
        let h = params.margin - (s[truth] - s[i]);
        if h > 0.0 {
            loss += lambda * h;
            d_out[i] += lambda;
            d_out[truth] -= lambda;
        }
    }
    if loss == 0.0 {
        return Ok(0.0);
    }
    for (i, g) in d_out.iter().enumerate() {
        grads.w_kk.row_mut(i).scaled_add(*g, &f.raw);
    }
    grads.b_kk += &d_out;
    let d_raw = params.w_kk.t().dot(&d_out);
    // raw_i = proj_z_i · proj_a
    let d_proj_a = f.proj_z.t().dot(&d_raw);
    for (i, dr) in d_raw.iter().enumerate() {
        let d_pz = &f.proj_a * *dr;
        for (j, g) in d_pz.iter().enumerate() {
            grads.w_zd.row_mut(j).scaled_add(*g, &zs.row(i));
        }
        grads.b_zd += &d_pz;
    }
    for (j, g) in d_proj_a.iter().enumerate() {
        grads.w_ad.row_mut(j).scaled_add(*g, &a_emb);
    }
    grads.b_ad += &d_proj_a;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoHeadedTrainConfig {
    pub d: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub lambda_joint: f64,
    pub seed: u64,
}

impl Default for TwoHeadedTrainConfig {
    fn default() -> Self {
        Self {
            d: 16,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 64,
            margin: DEFAULT_MARGIN,
            lambda_joint: DEFAULT_JOINT_WEIGHT,
            seed: 0,
        }
    }
}

/// Fit the explaining head on `train` with minibatch Adam.
pub fn train_two_headed(
    train: &DatasetManifest,
    store: &FeatureStore,
    oracle: &Oracle,
    table: &AnswerEmbeddingTable,
    config: &TwoHeadedTrainConfig,
) -> Result<TwoHeadedParams> {
    let first = train
        .examples
        .first()
        .ok_or_else(|| CxError::Empty("two-headed training set".into()))?;
    let k = first.k();
    let mut cached = Vec::with_capacity(train.len());
    for ex in &train.examples {
        cached.push((
            candidate_zs(ex, store, oracle)?,
            ex.answer_index,
            ex.truth()?,
        ));
    }
    let z_dim = cached[0].0.ncols();
    let mut params = TwoHeadedParams::init(config.seed, z_dim, table.dim(), config.d, k);
    params.margin = config.margin;
    params.lambda_joint = config.lambda_joint;
    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut state = AdamState::zeros(&params.sizes());
    let mut order: Vec<usize> = (0..cached.len()).collect();
    let mut shuffle = rng::stream(config.seed, 0x5_4ff1e);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let (zs, answer, truth) = &cached[i];
                hinge_backward(&params, zs, table.row(*answer), *truth, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<Vec<f64>> = grads
                .tensors()
                .iter()
                .map(|t| t.iter().map(|x| x * scale).collect())
                .collect();
            let g: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            state.step(&adam, &mut params.tensors_mut(), &g);
        }
    }
    Ok(params)
}

/// The original example's answer distribution, for the joint loss.
pub fn original_answer_dist(
    example: &CxExample,
    store: &FeatureStore,
    oracle: &Oracle,
) -> Result<AnswerDistribution> {
    let v = store.image(&example.image_id)?;
    let q = store.question(&example.question_id)?;
    Ok(oracle
        .vqa_eval(&OracleQuery {
            image_id: &example.image_id,
            question_id: &example.question_id,
            v: v.as_slice(),
            q: q.as_slice(),
        })?
        .answer_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn random_params(seed: u64, z: usize, e: usize, d: usize, k: usize) -> TwoHeadedParams {
        let mut r = rng::stream(seed, 1);
        let mut m = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| r.sample::<f64, _>(StandardNormal))
        };
        let w_zd = m(d, z);
        let w_ad = m(d, e);
        let w_kk = m(k, k);
        let b = m(3, d.max(k));
        TwoHeadedParams::new(
            w_zd,
            b.row(0).slice(ndarray::s![..d]).to_owned(),
            w_ad,
            b.row(1).slice(ndarray::s![..d]).to_owned(),
            w_kk,
            b.row(2).slice(ndarray::s![..k]).to_owned(),
            0.5,
            1.0,
        )
        .unwrap()
    }

    /// Straight-line loops, no ndarray products.
    #[allow(clippy::needless_range_loop)]
    fn loop_oracle(p: &TwoHeadedParams, zs: &Array2<f64>, a: &[f64]) -> Vec<f64> {
        let (d, k) = (p.d(), p.k());
        let mut pa = vec![0.0; d];
        for j in 0..d {
            pa[j] = p.b_ad[j];
            for (c, av) in a.iter().enumerate() {
                pa[j] += p.w_ad[[j, c]] * av;
            }
        }
        let mut raw = vec![0.0; k];
        for i in 0..k {
            for j in 0..d {
                let mut pz = p.b_zd[j];
                for c in 0..zs.ncols() {
                    pz += p.w_zd[[j, c]] * zs[[i, c]];
                }
                raw[i] += pz * pa[j];
            }
        }
        (0..k)
            .map(|r| p.b_kk[r] + (0..k).map(|c| p.w_kk[[r, c]] * raw[c]).sum::<f64>())
            .collect()
    }

    #[test]
    fn matches_loop_oracle() {
        let p = random_params(3, 5, 4, 3, 6);
        let mut r = rng::stream(4, 4);
        let zs = Array2::from_shape_fn((6, 5), |_| r.sample::<f64, _>(StandardNormal));
        let a: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
        let got = two_headed_forward(&p, &zs, ArrayView1::from(&a)).unwrap();
        let want = loop_oracle(&p, &zs, &a);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_output_layer_passes_raw_scores() {
        let k = 3;
        let p = TwoHeadedParams::new(
            Array2::ones((1, 1)),
            Array1::zeros(1),
            Array2::ones((1, 1)),
            Array1::zeros(1),
            Array2::eye(k),
            Array1::zeros(k),
            0.2,
            1.0,
        )
        .unwrap();
        let zs = Array2::from_shape_vec((3, 1), vec![1.0, -2.0, 0.5]).unwrap();
        let s = two_headed_forward(&p, &zs, ArrayView1::from(&[3.0])).unwrap();
        assert_eq!(s, vec![3.0, -6.0, 1.5]);
        let s = two_headed_forward(&p, &zs, ArrayView1::from(&[0.0])).unwrap();
        assert_eq!(s, vec![0.0; 3]);
    }

    #[test]
    fn shape_validation() {
        let bad = TwoHeadedParams::new(
            Array2::ones((2, 1)),
            Array1::zeros(1),
            Array2::ones((2, 1)),
            Array1::zeros(2),
            Array2::eye(3),
            Array1::zeros(3),
            0.2,
            1.0,
        );
        assert!(bad.is_err());
        let p = TwoHeadedParams::init(0, 2, 2, 2, 3);
        let zs = Array2::zeros((4, 2));
        assert!(two_headed_forward(&p, &zs, ArrayView1::from(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn loss_examples() {
        let p = TwoHeadedParams::init(0, 1, 1, 1, 3);
        let p = TwoHeadedParams {
            margin: 0.5,
            lambda_joint: 1.0,
            ..p
        };
        assert!((hinge_sum(&[2.0, 1.0, 1.6], 0, 0.5) - 0.1).abs() < 1e-9);

        let certain = AnswerDistribution::onehot(2, 0).unwrap();
        assert_eq!(two_headed_loss(&[3.0, 1.0, 2.4], 0, &certain, 0, &p), 0.0);
        let half = AnswerDistribution::new(vec![0.5, 0.5]).unwrap();
        let l = two_headed_loss(&[2.0, 1.0, 1.6], 0, &half, 0, &p);
        assert!((l - (std::f64::consts::LN_2 + 0.1)).abs() < 1e-9);
        let zero = AnswerDistribution::onehot(2, 1).unwrap();
        assert!(two_headed_loss(&[0.0; 3], 0, &zero, 0, &p).is_finite());
    }

    #[test]
    fn hinge_zero_iff_margin_met() {
        let s = [1.0, 0.79, 0.5];
        assert!(hinge_sum(&s, 0, 0.2) == 0.0);
        assert!(hinge_sum(&s, 0, 0.22) > 0.0);
        let shifted: Vec<f64> = s.iter().map(|x| x + 7.25).collect();
        assert!((hinge_sum(&s, 0, 0.5) - hinge_sum(&shifted, 0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let p = random_params(9, 4, 3, 2, 5);
        let mut r = rng::stream(5, 5);
        let zs = Array2::from_shape_fn((5, 4), |_| r.sample::<f64, _>(StandardNormal));
        let a: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
        let truth = 2;
        let loss = |p: &TwoHeadedParams| {
            let s = two_headed_forward(p, &zs, ArrayView1::from(&a)).unwrap();
            p.lambda_joint * hinge_sum(&s, truth, p.margin)
        };
        let mut g = p.zeros_like();
        let l = hinge_backward(&p, &zs, ArrayView1::from(&a), truth, &mut g).unwrap();
        assert!((l - loss(&p)).abs() < 1e-12);
        assert!(l > 0.0);
        let h = 1e-6;
        for t in 0..6 {
            for i in 0..p.tensors()[t].len() {
                let mut a1 = p.clone();
                a1.tensors_mut()[t][i] += h;
                let mut a2 = p.clone();
                a2.tensors_mut()[t][i] -= h;
                let fd = (loss(&a1) - loss(&a2)) / (2.0 * h);
                let an = g.tensors()[t][i];
                assert!(
                    (fd - an).abs() < 1e-5 * (1.0 + an.abs()),
                    "tensor {t}[{i}]: fd {fd} vs {an}"
                );
            }
        }
    }
}
