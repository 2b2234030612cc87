//! The VQA-model boundary: `(image features, question embedding)` to an
//! answer distribution and a multimodal embedding `z`.
//!
//! Three sources are provided:
//!
//! * **untrained**: seeded random projections in the pointwise-fusion form
//!   `z = ReLU(W_v v) ⊙ ReLU(W_q q)`, `P = softmax(W_o z)`, with `v` and `q`
//!   rescaled to unit root-mean-square first;
//! * **planted**: the same parametric form plus a per-key logit bump of
//!   height `sharpness` on a mode that equals the generator's planted answer
//!   with probability `accuracy` (decided by hashing the key, so evaluation
//!   order is irrelevant);
//! * **table**: lookups into precomputed outputs from a feature store.
//!
//! Untrained and planted oracles can be made trainable; their projection
//! weights then receive gradients through [`Oracle::backprop`].

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::data::store::FeatureStore;
use crate::data::synthetic::GeneratorTruth;
use crate::error::{CxError, Result};
use crate::rng;
use crate::vector::{softmax, AnswerDistribution, FeatureVector, MultimodalEmbedding};

/// Peak test accuracy of the pretrained VQA model used in the reference
/// experiments; the default accuracy of the planted oracle.
pub const PRETRAINED_ACCURACY: f64 = 0.477;
pub const DEFAULT_SHARPNESS: f64 = 8.0;

const INIT_STREAM: u64 = 0x0_5ac1e;
const PLANT_SALT: u64 = 0x9a7e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleDims {
    pub image: usize,
    pub question: usize,
    pub z: usize,
    pub answers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub answer_dist: AnswerDistribution,
    pub z: MultimodalEmbedding,
}

/// What the oracle is asked about. Parametric oracles read `v` and `q`;
/// the table and planted oracles also need the ids.
#[derive(Debug, Clone, Copy)]
pub struct OracleQuery<'a> {
    pub image_id: &'a str,
    pub question_id: &'a str,
    pub v: &'a [f64],
    pub q: &'a [f64],
}

/// Projection weights shared by the untrained and planted oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub w_v: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_o: Array2<f64>,
}

impl ProjectionParams {
    fn seeded(seed: u64, dims: OracleDims) -> Self {
        let mut rng = rng::stream(seed, INIT_STREAM);
        let mut init = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        let w_v = init(dims.z, dims.image);
        let w_q = init(dims.z, dims.question);
        let w_o = init(dims.answers, dims.z);
        Self { w_v, w_q, w_o }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_v: Array2::zeros(self.w_v.raw_dim()),
            w_q: Array2::zeros(self.w_q.raw_dim()),
            w_o: Array2::zeros(self.w_o.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w_v.as_slice().expect("standard layout"),
            self.w_q.as_slice().expect("standard layout"),
            self.w_o.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_v.as_slice_mut().expect("standard layout"),
            self.w_q.as_slice_mut().expect("standard layout"),
            self.w_o.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.w_v.len(), self.w_q.len(), self.w_o.len()]
    }

    fn add_assign(&mut self, other: &Self) {
        self.w_v += &other.w_v;
        self.w_q += &other.w_q;
        self.w_o += &other.w_o;
    }

    pub fn dims(&self) -> OracleDims {
        OracleDims {
            image: self.w_v.ncols(),
            question: self.w_q.ncols(),
            z: self.w_v.nrows(),
            answers: self.w_o.nrows(),
        }
    }
}

/// Gradients with respect to [`ProjectionParams`].
pub type OracleGrads = ProjectionParams;

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub truth: Arc<GeneratorTruth>,
    pub accuracy: f64,
    pub sharpness: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum OracleKind {
    Untrained {
        seed: u64,
        params: ProjectionParams,
    },
    Planted {
        config: PlantedConfig,
        params: ProjectionParams,
    },
    Table {
        store: Arc<FeatureStore>,
    },
}

#[derive(Debug, Clone)]
pub struct Oracle {
    kind: OracleKind,
    trainable: bool,
}

/// Intermediate values of one parametric forward pass.
#[derive(Debug, Clone)]
pub struct OracleCache {
    v: Array1<f64>,
    q: Array1<f64>,
    hv: Array1<f64>,
    hq: Array1<f64>,
    z: Array1<f64>,
    probs: Array1<f64>,
}

/// How the VQA model behaves during an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleMode {
    /// Random, frozen weights.
    Untrained,
    /// Planted (or, without generator truth, tabulated) outputs, frozen.
    Pretrained,
    /// Planted outputs whose projection weights are fine-tuned jointly.
    Trainable,
    /// Outputs read from the feature store.
    Table,
}

impl OracleMode {
    pub fn label(self) -> &'static str {
        match self {
            OracleMode::Untrained => "untrained",
            OracleMode::Pretrained => "pretrained",
            OracleMode::Trainable => "trainable",
            OracleMode::Table => "table",
        }
    }
}

impl std::fmt::Display for OracleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for OracleMode {
    type Err = CxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "untrained" => Ok(OracleMode::Untrained),
            "pretrained" | "planted" => Ok(OracleMode::Pretrained),
            "trainable" => Ok(OracleMode::Trainable),
            "table" => Ok(OracleMode::Table),
            _ => Err(CxError::InvalidArgument(format!(
                "unknown oracle mode `{s}`"
            ))),
        }
    }
}

/// Builds oracles of every mode over one dataset.
#[derive(Debug, Clone)]
pub struct OracleFactory {
    pub store: Arc<FeatureStore>,
    pub truth: Option<Arc<GeneratorTruth>>,
    pub z_dim: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub sharpness: f64,
}

impl OracleFactory {
    pub fn new(
        store: Arc<FeatureStore>,
        truth: Option<Arc<GeneratorTruth>>,
        z_dim: usize,
        seed: u64,
    ) -> Self {
        Self {
            store,
            truth,
            z_dim,
            seed,
            accuracy: PRETRAINED_ACCURACY,
            sharpness: DEFAULT_SHARPNESS,
        }
    }

    pub fn dims(&self) -> Result<OracleDims> {
        let answers = self.store.answer_table()?.n_answers();
        Ok(OracleDims {
            image: self.store.image_dim(),
            question: self.store.question_dim(),
            z: self.z_dim,
            answers,
        })
    }

    /// Untrained and planted oracles share projection weights, so paired
    /// cells differ only in the planted signal.
    pub fn build(&self, mode: OracleMode) -> Result<Oracle> {
        match (mode, &self.truth) {
            (OracleMode::Untrained, _) => make_untrained_oracle(self.seed, self.dims()?),
            (OracleMode::Pretrained | OracleMode::Trainable, Some(truth)) => {
                let mut o = make_planted_oracle(
                    truth.clone(),
                    self.accuracy,
                    self.sharpness,
                    self.seed,
                    self.dims()?,
                )?;
                o.set_trainable(mode == OracleMode::Trainable)?;
                Ok(o)
            }
            (OracleMode::Pretrained | OracleMode::Table, None) | (OracleMode::Table, Some(_)) => {
                Ok(make_table_oracle(self.store.clone()))
            }
            (OracleMode::Trainable, None) => Err(CxError::NotTrainable(
                "no generator truth; the only pretrained oracle is a table".into(),
            )),
        }
    }
}

pub fn make_untrained_oracle(seed: u64, dims: OracleDims) -> Result<Oracle> {
    check_dims(dims)?;
    Ok(Oracle {
        kind: OracleKind::Untrained {
            seed,
            params: ProjectionParams::seeded(seed, dims),
        },
        trainable: false,
    })
}

pub fn make_planted_oracle(
    truth: Arc<GeneratorTruth>,
    accuracy: f64,
    sharpness: f64,
    seed: u64,
    dims: OracleDims,
) -> Result<Oracle> {
    check_dims(dims)?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(CxError::InvalidArgument(format!(
            "accuracy {accuracy} not in [0, 1]"
        )));
    }
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(CxError::InvalidArgument(format!(
            "sharpness {sharpness} must be positive"
        )));
    }
    Ok(Oracle {
        kind: OracleKind::Planted {
            config: PlantedConfig {
                truth,
                accuracy,
                sharpness,
                seed,
            },
            params: ProjectionParams::seeded(seed, dims),
        },
        trainable: false,
    })
}

pub fn make_table_oracle(store: Arc<FeatureStore>) -> Oracle {
    Oracle {
        kind: OracleKind::Table { store },
        trainable: false,
    }
}

fn check_dims(d: OracleDims) -> Result<()> {
    if d.image == 0 || d.question == 0 || d.z == 0 || d.answers < 2 {
        return Err(CxError::InvalidArgument(format!(
            "oracle dims must be positive: {d:?}"
        )));
    }
    Ok(())
}

fn dim_check(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CxError::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl PlantedConfig {
    /// Mode answer for a key: the planted answer with probability `accuracy`,
    /// otherwise a hashed distractor.
    pub fn mode(&self, image_id: &str, question_id: &str, n_answers: usize) -> Result<usize> {
        let planted = self
            .truth
            .planted_answer(image_id, question_id)
            .ok_or_else(|| {
                CxError::Missing(format!("planted answer for ({image_id}, {question_id})"))
            })?;
        let h = rng::derive(
            self.seed ^ PLANT_SALT,
            rng::hash_key(&[image_id, question_id]),
        );
        if rng::unit_from_hash(h) < self.accuracy {
            return Ok(planted);
        }
        let offset = 1 + (rng::mix64(h ^ 0xd157) % (n_answers as u64 - 1)) as usize;
        Ok((planted + offset) % n_answers)
    }
}

impl Oracle {
    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) -> Result<()> {
        if trainable && matches!(self.kind, OracleKind::Table { .. }) {
            return Err(CxError::NotTrainable(
                "a table oracle has no parameters".into(),
            ));
        }
        self.trainable = trainable;
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            OracleKind::Untrained { .. } => "untrained",
            OracleKind::Planted { .. } => "planted",
            OracleKind::Table { .. } => "table",
        }
    }

    pub fn params(&self) -> Option<&ProjectionParams> {
        match &self.kind {
            OracleKind::Untrained { params, .. } | OracleKind::Planted { params, .. } => {
                Some(params)
            }
            OracleKind::Table { .. } => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ProjectionParams> {
        match &mut self.kind {
            OracleKind::Untrained { params, .. } | OracleKind::Planted { params, .. } => {
                Some(params)
            }
            OracleKind::Table { .. } => None,
        }
    }

    pub fn z_dim(&self) -> usize {
        match &self.kind {
            OracleKind::Untrained { params, .. } | OracleKind::Planted { params, .. } => {
                params.w_v.nrows()
            }
            OracleKind::Table { store } => store.z_dim(),
        }
    }

    pub fn vqa_eval(&self, query: &OracleQuery<'_>) -> Result<OracleOutput> {
        match &self.kind {
            OracleKind::Table { store } => {
                if store.image_dim() > 0 {
                    dim_check(store.image_dim(), query.v.len())?;
                }
                if store.question_dim() > 0 {
                    dim_check(store.question_dim(), query.q.len())?;
                }
                let (answer_dist, z) = store.oracle_output(query.image_id, query.question_id)?;
                Ok(OracleOutput { answer_dist, z })
            }
            _ => {
                let cache = self.forward(query)?;
                Ok(OracleOutput {
                    answer_dist: AnswerDistribution::new(cache.probs.to_vec())?,
                    z: FeatureVector::new(cache.z.to_vec())?,
                })
            }
        }
    }

    /// Parametric forward pass keeping what [`Self::backprop`] needs.
    pub fn forward(&self, query: &OracleQuery<'_>) -> Result<OracleCache> {
        let params = self.params().ok_or_else(|| {
            CxError::NotTrainable("table oracle has no parametric forward pass".into())
        })?;
        dim_check(params.w_v.ncols(), query.v.len())?;
        dim_check(params.w_q.ncols(), query.q.len())?;
        let v = rms_normalized(query.v);
        let q = rms_normalized(query.q);
        let hv = params.w_v.dot(&v);
        let hq = params.w_q.dot(&q);
        let z = hv.mapv(relu) * hq.mapv(relu);
        let mut logits = params.w_o.dot(&z);
        if let OracleKind::Planted { config, .. } = &self.kind {
            let mode = config.mode(query.image_id, query.question_id, logits.len())?;
            logits[mode] += config.sharpness;
        }
        let probs = Array1::from(softmax(logits.as_slice().expect("contiguous")));
        Ok(OracleCache {
            v,
            q,
            hv,
            hq,
            z,
            probs,
        })
    }

    /// Accumulate parameter gradients into `grads` given upstream gradients
    /// with respect to `z` and the answer probabilities.
    pub fn backprop(
        &self,
        cache: &OracleCache,
        d_z: &[f64],
        d_probs: &[f64],
        grads: &mut OracleGrads,
    ) -> Result<()> {
        if !self.trainable {
            return Err(CxError::NotTrainable(format!(
                "{} oracle is frozen",
                self.label()
            )));
        }
        let params = self
            .params()
            .ok_or_else(|| CxError::NotTrainable("table oracle".into()))?;
        dim_check(cache.z.len(), d_z.len())?;
        dim_check(cache.probs.len(), d_probs.len())?;
        let d_probs = ArrayView1::from(d_probs);
        // Softmax Jacobian-vector product.
        let inner = cache.probs.dot(&d_probs);
        let d_logits = &cache.probs * &(d_probs.to_owned() - inner);
        let d_z_total = ArrayView1::from(d_z).to_owned() + params.w_o.t().dot(&d_logits);
        let rv = cache.hv.mapv(relu);
        let rq = cache.hq.mapv(relu);
        let d_hv = &d_z_total * &rq * cache.hv.mapv(relu_grad);
        let d_hq = &d_z_total * &rv * cache.hq.mapv(relu_grad);
        let mut step = params.zeros_like();
        outer_into(&mut step.w_o, &d_logits, &cache.z);
        outer_into(&mut step.w_v, &d_hv, &cache.v);
        outer_into(&mut step.w_q, &d_hq, &cache.q);
        grads.add_assign(&step);
        Ok(())
    }
}

impl OracleCache {
    pub fn probs(&self) -> &[f64] {
        self.probs.as_slice().expect("contiguous")
    }

    pub fn z(&self) -> &[f64] {
        self.z.as_slice().expect("contiguous")
    }
}

/// Rescale to unit root-mean-square so input norms carry no signal.
fn rms_normalized(x: &[f64]) -> Array1<f64> {
    let x = ArrayView1::from(x);
    let rms = (x.dot(&x) / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.mapv(|v| v / rms)
    } else {
        x.to_owned()
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn outer_into(out: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, ai) in a.iter().enumerate() {
        if *ai != 0.0 {
            out.row_mut(i).scaled_add(*ai, b);
        }
    }
}
