//! Input assembly: ten per-candidate feature blocks concatenated into one
//! row, with optional noise replacement of selected blocks.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::oracle::{Oracle, OracleCache, OracleQuery};
use crate::rng;
use crate::types::CxExample;
use crate::vector::{AnswerDistribution, AnswerEmbeddingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    V,
    VPrime,
    VMul,
    VDist,
    Rank,
    Q,
    A,
    APrime,
    Z,
    ZPrime,
}

impl Feature {
    pub const ALL: [Feature; 10] = [
        Feature::V,
        Feature::VPrime,
        Feature::VMul,
        Feature::VDist,
        Feature::Rank,
        Feature::Q,
        Feature::A,
        Feature::APrime,
        Feature::Z,
        Feature::ZPrime,
    ];

    pub const VISUAL: [Feature; 5] = [
        Feature::V,
        Feature::VPrime,
        Feature::VMul,
        Feature::VDist,
        Feature::Rank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::V => "V",
            Feature::VPrime => "V'",
            Feature::VMul => "VM",
            Feature::VDist => "VD",
            Feature::Rank => "Rank",
            Feature::Q => "Q",
            Feature::A => "A",
            Feature::APrime => "A'",
            Feature::Z => "Z",
            Feature::ZPrime => "Z'",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Whether the block takes the same value on every candidate row of an example.
    pub fn per_example(self) -> bool {
        matches!(self, Feature::V | Feature::Q | Feature::A | Feature::Z)
    }
}

/// Per-block widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub image: usize,
    pub question: usize,
    pub answer: usize,
    pub z: usize,
    pub k: usize,
}

impl FeatureDims {
    pub fn reference() -> Self {
        Self {
            image: 2048,
            question: 2400,
            answer: 2400,
            z: 360,
            k: 24,
        }
    }

    pub fn desk() -> Self {
        Self {
            image: 64,
            question: 32,
            answer: 32,
            z: 16,
            k: 24,
        }
    }

    pub fn width(&self, f: Feature) -> usize {
        match f {
            Feature::V | Feature::VPrime | Feature::VMul => self.image,
            Feature::VDist => 1,
            Feature::Rank => self.k,
            Feature::Q => self.question,
            Feature::A | Feature::APrime => self.answer,
            Feature::Z | Feature::ZPrime => self.z,
        }
    }

    pub fn offset(&self, f: Feature) -> usize {
        Feature::ALL[..f.index()]
            .iter()
            .map(|g| self.width(*g))
            .sum()
    }

    pub fn total(&self) -> usize {
        Feature::ALL.iter().map(|f| self.width(*f)).sum()
    }

    /// Widths implied by a store, answer table, and oracle.
    pub fn infer(
        store: &FeatureStore,
        table: &AnswerEmbeddingTable,
        oracle: &Oracle,
        k: usize,
    ) -> Self {
        Self {
            image: store.image_dim(),
            question: store.question_dim(),
            answer: table.dim(),
            z: oracle.z_dim(),
            k,
        }
    }
}

/// Which blocks are replaced by uniform noise on `[noise_low, noise_high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationMask {
    masked: [bool; 10],
    pub noise_seed: u64,
    pub noise_low: f64,
    pub noise_high: f64,
}

impl Default for AblationMask {
    fn default() -> Self {
        Self::none()
    }
}

impl AblationMask {
    pub fn none() -> Self {
        Self {
            masked: [false; 10],
            noise_seed: 0,
            noise_low: 0.0,
            noise_high: 1.0,
        }
    }

    pub fn all() -> Self {
        Self {
            masked: [true; 10],
            ..Self::none()
        }
    }

    pub fn of(features: &[Feature]) -> Self {
        let mut m = Self::none();
        for f in features {
            m.masked[f.index()] = true;
        }
        m
    }

    pub fn with_seed(self, noise_seed: u64) -> Self {
        Self { noise_seed, ..self }
    }

    pub fn is_masked(&self, f: Feature) -> bool {
        self.masked[f.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.masked.iter().any(|m| *m)
    }

    pub fn masked(&self) -> Vec<Feature> {
        Feature::ALL
            .iter()
            .copied()
            .filter(|f| self.is_masked(*f))
            .collect()
    }

    /// Canonical token list, parseable by [`FromStr`].
    pub fn label(&self) -> String {
        if self.is_empty() {
            return "none".into();
        }
        if self.masked.iter().all(|m| *m) {
            return "all".into();
        }
        let mut parts = Vec::new();
        let pair = |a: Feature, b: Feature| self.is_masked(a) && self.is_masked(b);
        if pair(Feature::V, Feature::VPrime) {
            parts.push("V");
        } else if self.is_masked(Feature::V) {
            parts.push("V0");
        } else if self.is_masked(Feature::VPrime) {
            parts.push("V1");
        }
        for (f, t) in [
            (Feature::VMul, "VM"),
            (Feature::VDist, "VD"),
            (Feature::Rank, "Rank"),
            (Feature::Q, "Q"),
        ] {
            if self.is_masked(f) {
                parts.push(t);
            }
        }
        if pair(Feature::A, Feature::APrime) {
            parts.push("A");
        } else if self.is_masked(Feature::A) {
            parts.push("A0");
        } else if self.is_masked(Feature::APrime) {
            parts.push("A1");
        }
        if pair(Feature::Z, Feature::ZPrime) {
            parts.push("Z");
        } else if self.is_masked(Feature::Z) {
            parts.push("Z0");
        } else if self.is_masked(Feature::ZPrime) {
            parts.push("Z1");
        }
        parts.join("+")
    }

    fn fill_noise(&self, mut out: ArrayViewMut1<'_, f64>, key: u64) {
        let mut r = rng::stream(self.noise_seed, key);
        let span = self.noise_high - self.noise_low;
        out.iter_mut()
            .for_each(|x| *x = self.noise_low + span * r.random::<f64>());
    }
}

impl fmt::Display for AblationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Tokens, separated by `+` or `,`, case-insensitive:
/// `V` (V and V'), `V0` (V only), `V1` (V' only), `VM`, `VD`, `Rank`, `Q`,
/// `A` (A and A'), `A0`, `A1`, `Z` (Z and Z'), `Z0`, `Z1`, plus the groups `visual`,
/// `all`, and `none`.
impl FromStr for AblationMask {
    type Err = CxError;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Self::none();
        for tok in s.split(['+', ',']).map(str::trim).filter(|t| !t.is_empty()) {
            let feats: &[Feature] = match tok.to_ascii_lowercase().as_str() {
                "none" => &[],
                "all" => &Feature::ALL,
                "visual" => &Feature::VISUAL,
                "v" => &[Feature::V, Feature::VPrime],
                "v0" => &[Feature::V],
                "v1" => &[Feature::VPrime],
                "vm" => &[Feature::VMul],
                "vd" => &[Feature::VDist],
                "rank" => &[Feature::Rank],
                "q" => &[Feature::Q],
                "a" => &[Feature::A, Feature::APrime],
                "a0" => &[Feature::A],
                "a1" => &[Feature::APrime],
                "z" => &[Feature::Z, Feature::ZPrime],
                "z0" => &[Feature::Z],
                "z1" => &[Feature::ZPrime],
                _ => {
                    return Err(CxError::InvalidArgument(format!(
                        "unknown mask token `{tok}`"
                    )))
                }
            };
            for f in feats {
                m.masked[f.index()] = true;
            }
        }
        Ok(m)
    }
}

/// Everything assembly reads from.
#[derive(Clone, Copy)]
pub struct FeatureSources<'a> {
    pub store: &'a FeatureStore,
    pub oracle: &'a Oracle,
    pub table: &'a AnswerEmbeddingTable,
}

/// One assembled input row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAssembly {
    pub values: Array1<f64>,
    pub dims: FeatureDims,
}

impl FeatureAssembly {
    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, f: Feature) -> &[f64] {
        let o = self.dims.offset(f);
        &self.values.as_slice().expect("contiguous")[o..o + self.dims.width(f)]
    }
}

/// The K rows of one example, plus oracle caches when the oracle trains.
#[derive(Debug, Clone)]
pub struct ExampleFeatures {
    pub rows: Array2<f64>,
    pub caches: Option<(OracleCache, Vec<OracleCache>)>,
}

struct OracleView {
    probs: Vec<f64>,
    z: Vec<f64>,
    cache: Option<OracleCache>,
}

fn run_oracle(
    oracle: &Oracle,
    image_id: &str,
    question_id: &str,
    v: &[f64],
    q: &[f64],
) -> Result<OracleView> {
    let query = OracleQuery {
        image_id,
        question_id,
        v,
        q,
    };
    if oracle.is_trainable() {
        let cache = oracle.forward(&query)?;
        Ok(OracleView {
            probs: cache.probs().to_vec(),
            z: cache.z().to_vec(),
            cache: Some(cache),
        })
    } else {
        let out = oracle.vqa_eval(&query)?;
        Ok(OracleView {
            probs: out.answer_dist.probs().to_vec(),
            z: out.z.into_vec(),
            cache: None,
        })
    }
}

fn check_width(dims: &FeatureDims, f: Feature, got: usize) -> Result<()> {
    if dims.width(f) != got {
        return Err(CxError::Cell {
            cell: format!("feature {}", f.name()),
            source: Box::new(CxError::DimensionMismatch {
                expected: dims.width(f),
                got,
            }),
        });
    }
    Ok(())
}

/// Frozen-oracle outputs of one example: `Z`, and `A'`/`Z'` per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFeatures {
    z: Vec<f64>,
    a_prime: Array2<f64>,
    z_prime: Array2<f64>,
}

/// Run a frozen oracle once over `example` so later assemblies can skip it.
pub fn oracle_features(example: &CxExample, src: FeatureSources<'_>) -> Result<OracleFeatures> {
    if src.oracle.is_trainable() {
        return Err(CxError::InvalidArgument(
            "oracle outputs change while the oracle trains".into(),
        ));
    }
    let v = src.store.image(&example.image_id)?;
    let q = src.store.question(&example.question_id)?;
    let original = run_oracle(
        src.oracle,
        &example.image_id,
        &example.question_id,
        v.as_slice(),
        q.as_slice(),
    )?;
    let k = example.k();
    let mut a_prime = Array2::zeros((k, src.table.dim()));
    let mut z_prime = Array2::zeros((k, original.z.len()));
    for (i, id) in example.candidates.ids().iter().enumerate() {
        let vp = src.store.image(id)?;
        let cand = run_oracle(
            src.oracle,
            id,
            &example.question_id,
            vp.as_slice(),
            q.as_slice(),
        )?;
        let dist = AnswerDistribution::new(cand.probs)?;
        a_prime.row_mut(i).assign(
            &src.table
                .rows()
                .t()
                .dot(&ndarray::ArrayView1::from(dist.probs())),
        );
        if cand.z.len() != z_prime.ncols() {
            return Err(CxError::DimensionMismatch {
                expected: z_prime.ncols(),
                got: cand.z.len(),
            });
        }
        z_prime
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&cand.z));
    }
    Ok(OracleFeatures {
        z: original.z,
        a_prime,
        z_prime,
    })
}

/// Assemble all K candidate rows of `example`.
pub fn assemble_example(
    example: &CxExample,
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<ExampleFeatures> {
    assemble_with(example, src, dims, mask, None)
}

/// As [`assemble_example`], taking oracle outputs from `pre` when given.
pub fn assemble_with(
    example: &CxExample,
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
    pre: Option<&OracleFeatures>,
) -> Result<ExampleFeatures> {
    let k = example.k();
    if k != dims.k {
        return Err(CxError::DimensionMismatch {
            expected: dims.k,
            got: k,
        });
    }
    if example.answer_index >= src.table.n_answers() {
        return Err(CxError::InvalidArgument(format!(
            "answer index {} outside table",
            example.answer_index
        )));
    }
    let v = src.store.image(&example.image_id)?;
    let q = src.store.question(&example.question_id)?;
    let v = v.as_slice();
    let q = q.as_slice();
    check_width(dims, Feature::V, v.len())?;
    check_width(dims, Feature::Q, q.len())?;
    check_width(dims, Feature::A, src.table.dim())?;
    let a = src.table.row(example.answer_index);
    let original = match pre {
        Some(p) => OracleView {
            probs: Vec::new(),
            z: p.z.clone(),
            cache: None,
        },
        None => run_oracle(src.oracle, &example.image_id, &example.question_id, v, q)?,
    };
    check_width(dims, Feature::Z, original.z.len())?;
    if let Some(p) = pre {
        if p.a_prime.nrows() != k {
            return Err(CxError::DimensionMismatch {
                expected: k,
                got: p.a_prime.nrows(),
            });
        }
        check_width(dims, Feature::APrime, p.a_prime.ncols())?;
        check_width(dims, Feature::ZPrime, p.z_prime.ncols())?;
    }

    let mut rows = Array2::<f64>::zeros((k, dims.total()));
    let mut cand_caches = Vec::new();
    let key_base = rng::hash_key(&[&example.image_id, &example.question_id]);
    let at = |f: Feature| dims.offset(f)..dims.offset(f) + dims.width(f);
    for (i, id) in example.candidates.ids().iter().enumerate() {
        let vp = src.store.image(id)?;
        let vp = vp.as_slice();
        check_width(dims, Feature::VPrime, vp.len())?;
        let (ap, zp, cache) = match pre {
            Some(p) => (p.a_prime.row(i).to_owned(), p.z_prime.row(i).to_vec(), None),
            None => {
                let cand = run_oracle(src.oracle, id, &example.question_id, vp, q)?;
                let dist = AnswerDistribution::new(cand.probs)?;
                (
                    src.table
                        .rows()
                        .t()
                        .dot(&ndarray::ArrayView1::from(dist.probs())),
                    cand.z,
                    cand.cache,
                )
            }
        };

        let mut row = rows.row_mut(i);
        let row = row.as_slice_mut().expect("contiguous");
        row[at(Feature::V)].copy_from_slice(v);
        row[at(Feature::VPrime)].copy_from_slice(vp);
        let mut sq = 0.0;
        for (j, (x, y)) in v.iter().zip(vp).enumerate() {
            row[dims.offset(Feature::VMul) + j] = x * y;
            sq += (y - x) * (y - x);
        }
        row[dims.offset(Feature::VDist)] = sq.sqrt();
        row[dims.offset(Feature::Rank) + i] = 1.0;
        row[at(Feature::Q)].copy_from_slice(q);
        row[at(Feature::A)]
            .iter_mut()
            .zip(a.iter())
            .for_each(|(d, s)| *d = *s);
        row[at(Feature::APrime)]
            .iter_mut()
            .zip(ap.iter())
            .for_each(|(d, s)| *d = *s);
        row[at(Feature::Z)].copy_from_slice(&original.z);
        row[at(Feature::ZPrime)].copy_from_slice(&zp);
        if let Some(c) = cache {
            cand_caches.push(c);
        }
    }
    if !mask.is_empty() {
        for (i, mut row) in rows.outer_iter_mut().enumerate() {
            for f in mask.masked() {
                let row_key = if f.per_example() {
                    key_base
                } else {
                    key_base ^ (i as u64).wrapping_mul(0x100_0001)
                };
                let key = rng::derive(row_key, f.index() as u64);
                let o = dims.offset(f);
                mask.fill_noise(row.slice_mut(ndarray::s![o..o + dims.width(f)]), key);
            }
        }
    }
    let caches = original.cache.map(|c| (c, cand_caches));
    Ok(ExampleFeatures { rows, caches })
}

/// One candidate's assembled row.
pub fn assemble_features(
    example: &CxExample,
    candidate: usize,
    src: FeatureSources<'_>,
    dims: &FeatureDims,
    mask: &AblationMask,
) -> Result<FeatureAssembly> {
    if candidate >= example.k() {
        return Err(CxError::InvalidArgument(format!(
            "candidate {candidate} out of range for K={}",
            example.k()
        )));
    }
    let all = assemble_example(example, src, dims, mask)?;
    Ok(FeatureAssembly {
        values: all.rows.row(candidate).to_owned(),
        dims: *dims,
    })
}
