//! Synthetic VQA-CX data with planted ground truth.
//!
//! The generator reproduces the dataset statistics the ranking models are
//! sensitive to:
//!
//! * the counterexample's nearest-neighbor rank follows a truncated
//!   geometric law with a configurable top-5 mass;
//! * a fraction of counterexamples carry the original answer;
//! * a fraction of examples has no labeled complement, and a fraction has
//!   its complement missing from the neighbor list;
//! * answer embeddings are clustered, and the counterexample's answer is
//!   drawn from the original answer's cluster more often than chance;
//! * original answers follow a Zipf law over the vocabulary;
//! * in a fraction of examples the counterexample image flips the
//!   question-relevant visual attributes (the leading `semantic_dims`
//!   coordinates) of the original.
//!
//! All randomness for example `i` comes from a stream keyed by `(seed, i)`.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use super::jsonl;
use super::manifest::{build_dataset, DatasetManifest, KnnLists, RawExample};
use super::store::FeatureStore;
use crate::error::{CxError, Result};
use crate::io::{read_string, write_atomic};
use crate::rng;
use crate::types::{CandidateSet, DEFAULT_K};
use crate::vector::AnswerEmbeddingTable;

pub const TRUTH_MAGIC: &str = "CXTRUTH";

const TOP: usize = 5;
const NEAREST_DISTANCE: f64 = 8.0;
const FARTHEST_DISTANCE: f64 = 8.6;
const ANSWER_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDims {
    pub image: usize,
    pub question: usize,
    pub answer: usize,
}

impl Default for SyntheticDims {
    fn default() -> Self {
        Self {
            image: 64,
            question: 32,
            answer: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub k: usize,
    pub n_answers: usize,
    /// Zipf exponent of the original-answer frequencies (0 is uniform).
    pub answer_skew: f64,
    pub n_clusters: usize,
    /// Within-cluster spread of answer embeddings around the cluster center.
    pub cluster_spread: f64,
    pub dims: SyntheticDims,
    /// Target P(rank(I*) < 5).
    pub rank_skew: f64,
    pub same_answer_rate: f64,
    pub no_complement_rate: f64,
    pub asymmetry_rate: f64,
    /// P(counterexample answer comes from the original answer's cluster),
    /// given it differs from the original answer.
    pub near_answer_rate: f64,
    /// P(a non-counterexample neighbor keeps the original answer).
    pub neighbor_same_answer_rate: f64,
    /// P(the counterexample image flips the semantic coordinates).
    pub visual_cue_rate: f64,
    pub semantic_dims: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_examples: 10_000,
            k: DEFAULT_K,
            n_answers: 200,
            answer_skew: 1.5,
            n_clusters: 10,
            cluster_spread: 0.6,
            dims: SyntheticDims::default(),
            rank_skew: 0.44,
            same_answer_rate: 0.09,
            no_complement_rate: 0.22,
            asymmetry_rate: 0.03,
            near_answer_rate: 0.35,
            neighbor_same_answer_rate: 0.7,
            visual_cue_rate: 0.25,
            semantic_dims: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CxError::InfeasibleSpec(m));
        for (name, v) in [
            ("rank_skew", self.rank_skew),
            ("same_answer_rate", self.same_answer_rate),
            ("no_complement_rate", self.no_complement_rate),
            ("asymmetry_rate", self.asymmetry_rate),
            ("near_answer_rate", self.near_answer_rate),
            ("neighbor_same_answer_rate", self.neighbor_same_answer_rate),
            ("visual_cue_rate", self.visual_cue_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is not in [0, 1]"));
            }
        }
        if self.k < 2 {
            return bad(format!("K = {} < 2", self.k));
        }
        let floor = TOP.min(self.k) as f64 / self.k as f64;
        if self.rank_skew < floor - 1e-12 {
            return bad(format!(
                "rank_skew {} is below the uniform top-{TOP} mass {floor:.5} for K = {}",
                self.rank_skew, self.k
            ));
        }
        if self.n_answers < 2 {
            return bad("need at least 2 answers".into());
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_answers {
            return bad(format!(
                "n_clusters {} not in [1, n_answers]",
                self.n_clusters
            ));
        }
        if self.dims.image == 0 || self.dims.question == 0 || self.dims.answer == 0 {
            return bad("feature dims must be positive".into());
        }
        if self.semantic_dims >= self.dims.image {
            return bad(format!(
                "semantic_dims {} must be < image dim {}",
                self.semantic_dims, self.dims.image
            ));
        }
        if !(self.answer_skew >= 0.0 && self.answer_skew.is_finite()) {
            return bad("answer_skew must be finite and non-negative".into());
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Truncated geometric law on `0..k`: `P(r) ∝ ratio^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankLaw {
    pub k: usize,
    pub ratio: f64,
}

impl RankLaw {
    /// Solve for the ratio whose top-5 mass equals `skew` (bisection).
    pub fn fit(k: usize, skew: f64) -> Result<Self> {
        let m = TOP.min(k);
        let floor = m as f64 / k as f64;
        if !(floor - 1e-12..=1.0).contains(&skew) {
            return Err(CxError::InfeasibleSpec(format!(
                "top-{m} mass {skew} not in [{floor}, 1]"
            )));
        }
        if skew <= floor {
            return Ok(Self { k, ratio: 1.0 });
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (Self { k, ratio: mid }).top_mass(m) > skew {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self {
            k,
            ratio: 0.5 * (lo + hi),
        })
    }

    pub fn pmf(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.k).map(|r| self.ratio.powi(r as i32)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn top_mass(&self, m: usize) -> f64 {
        self.pmf().iter().take(m).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (r, p) in self.pmf().into_iter().enumerate() {
            acc += p;
            if u < acc {
                return r;
            }
        }
        self.k - 1
    }
}

/// Per-example facts the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleTruth {
    pub image_id: String,
    pub question_id: String,
    pub labeled: bool,
    pub asymmetric: bool,
    /// Neighbor rank of the counterexample (present for labeled examples).
    pub truth_rank: Option<usize>,
    pub cued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedAnswer {
    pub image_id: String,
    pub question_id: String,
    pub answer: usize,
}

/// The planted answer of every generated (image, question) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneratorTruth {
    planted: Vec<PlantedAnswer>,
    index: HashMap<(String, String), usize>,
    pub examples: Vec<ExampleTruth>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthHeader {
    count: usize,
}

impl GeneratorTruth {
    fn push(&mut self, image_id: &str, question_id: &str, answer: usize) {
        self.index.insert(
            (image_id.to_string(), question_id.to_string()),
            self.planted.len(),
        );
        self.planted.push(PlantedAnswer {
            image_id: image_id.into(),
            question_id: question_id.into(),
            answer,
        });
    }

    pub fn from_planted(planted: Vec<PlantedAnswer>) -> Self {
        let mut t = Self::default();
        for p in planted {
            t.push(&p.image_id, &p.question_id, p.answer);
        }
        t
    }

    pub fn planted_answer(&self, image_id: &str, question_id: &str) -> Option<usize> {
        self.index
            .get(&(image_id.to_string(), question_id.to_string()))
            .map(|&i| self.planted[i].answer)
    }

    pub fn planted(&self) -> &[PlantedAnswer] {
        &self.planted
    }

    pub fn to_text(&self) -> Result<String> {
        jsonl::encode(
            TRUTH_MAGIC,
            &TruthHeader {
                count: self.planted.len(),
            },
            &self.planted,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (_h, planted): (TruthHeader, Vec<PlantedAnswer>) = jsonl::decode(TRUTH_MAGIC, text)?;
        Ok(Self::from_planted(planted))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&read_string(path)?)
    }
}

/// Everything [`generate_synthetic`] emits.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub raw: Vec<RawExample>,
    pub knn: KnnLists,
    pub store: FeatureStore,
    pub truth: GeneratorTruth,
}

impl SyntheticDataset {
    /// Filter the raw examples (drops unlabeled and asymmetric ones).
    pub fn build(&self) -> Result<DatasetManifest> {
        build_dataset(&self.raw, &self.knn)
    }
}

pub fn image_id(example: usize) -> String {
    format!("e{example:06}")
}

pub fn candidate_id(example: usize, rank: usize) -> String {
    format!("e{example:06}n{rank:02}")
}

fn hidden_truth_id(example: usize) -> String {
    format!("e{example:06}x")
}

pub fn question_id(example: usize) -> String {
    format!("q{example:06}")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit-sphere answer embeddings grouped in clusters; answer `a` belongs
/// to cluster `a % n_clusters`.
fn answer_embeddings(spec: &SyntheticSpec) -> Result<AnswerEmbeddingTable> {
    let mut rng = rng::stream(spec.seed, ANSWER_STREAM);
    let d = spec.dims.answer;
    let centers: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| {
            let mut c = gaussian(&mut rng, d);
            normalize(&mut c);
            c
        })
        .collect();
    let scale = spec.cluster_spread / (d as f64).sqrt();
    let mut flat = Vec::with_capacity(spec.n_answers * d);
    for a in 0..spec.n_answers {
        let c = &centers[a % spec.n_clusters];
        let mut e: Vec<f64> = c
            .iter()
            .zip(gaussian(&mut rng, d))
            .map(|(c, g)| c + scale * g)
            .collect();
        normalize(&mut e);
        // Round to what the store will hold.
        flat.extend(e.into_iter().map(|x| f64::from(x as f32)));
    }
    AnswerEmbeddingTable::new(Array2::from_shape_vec((spec.n_answers, d), flat).expect("shape"))
}

fn other_answer(rng: &mut ChaCha8Rng, n: usize, not: usize) -> usize {
    let a = rng.random_range(0..n - 1);
    if a >= not {
        a + 1
    } else {
        a
    }
}

fn near_answer(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, original: usize) -> usize {
    let cluster = original % spec.n_clusters;
    let members: Vec<usize> = (cluster..spec.n_answers)
        .step_by(spec.n_clusters)
        .filter(|&a| a != original)
        .collect();
    if members.is_empty() {
        other_answer(rng, spec.n_answers, original)
    } else {
        members[rng.random_range(0..members.len())]
    }
}

/// A displacement of exact norm `length`. When `flip` is set, the semantic
/// coordinates move to (approximately) the negation of the original's.
fn displacement(
    rng: &mut ChaCha8Rng,
    v: &[f64],
    semantic: usize,
    length: f64,
    flip: bool,
) -> Vec<f64> {
    let d = v.len();
    if !flip {
        let mut g = gaussian(rng, d);
        normalize(&mut g);
        return g.into_iter().map(|x| x * length).collect();
    }
    let mut f: Vec<f64> = v[..semantic]
        .iter()
        .map(|x| -2.0 * x + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cap = 0.9 * length;
    if fnorm > cap {
        f.iter_mut().for_each(|x| *x *= cap / fnorm);
    }
    let fnorm2: f64 = f.iter().map(|x| x * x).sum();
    let rest = (length * length - fnorm2).max(0.0).sqrt();
    let mut g = gaussian(rng, d - semantic);
    normalize(&mut g);
    f.extend(g.into_iter().map(|x| x * rest));
    f
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let law = RankLaw::fit(spec.k, spec.rank_skew)?;
    let table = answer_embeddings(spec)?;
    let labels: Vec<String> = (0..spec.n_answers)
        .map(|a| format!("c{:02}a{a:04}", a % spec.n_clusters))
        .collect();

    let mut store = FeatureStore::new();
    store.set_answer_table(labels, &table)?;
    let mut raw = Vec::with_capacity(spec.n_examples);
    let mut knn = KnnLists::default();
    let mut truth = GeneratorTruth::default();
    let answer_law = Zipf::new(spec.n_answers as f64, spec.answer_skew)
        .map_err(|e| CxError::InfeasibleSpec(format!("answer law: {e}")))?;
    let step = (FARTHEST_DISTANCE - NEAREST_DISTANCE) / (spec.k.max(2) - 1) as f64;

    for ex in 0..spec.n_examples {
        let mut rng = rng::stream(spec.seed, ex as u64);
        let labeled = rng.random::<f64>() >= spec.no_complement_rate;
        let asymmetric = labeled && rng.random::<f64>() < spec.asymmetry_rate;
        let answer = (rng.sample(answer_law) as usize).clamp(1, spec.n_answers) - 1;
        let rank = law.sample(&mut rng);
        let truth_answer = if rng.random::<f64>() < spec.same_answer_rate {
            answer
        } else if rng.random::<f64>() < spec.near_answer_rate {
            near_answer(&mut rng, spec, answer)
        } else {
            other_answer(&mut rng, spec.n_answers, answer)
        };
        let cued = rng.random::<f64>() < spec.visual_cue_rate;

        let img = image_id(ex);
        let qid = question_id(ex);
        let v = gaussian(&mut rng, spec.dims.image);
        store.insert_image(&img, &v)?;
        store.insert_question(&qid, &gaussian(&mut rng, spec.dims.question))?;
        truth.push(&img, &qid, answer);

        let mut ids = Vec::with_capacity(spec.k);
        for i in 0..spec.k {
            let length = NEAREST_DISTANCE + step * (i as f64 + 0.5 * rng.random::<f64>());
            let is_truth = labeled && i == rank;
            let delta = displacement(&mut rng, &v, spec.semantic_dims, length, is_truth && cued);
            let features: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let neighbor_answer = if rng.random::<f64>() < spec.neighbor_same_answer_rate {
                answer
            } else {
                other_answer(&mut rng, spec.n_answers, answer)
            };
            let id = candidate_id(ex, i);
            if is_truth && asymmetric {
                // The counterexample exists but another image occupies its
                // slot in this image's neighbor list.
                let hidden = hidden_truth_id(ex);
                store.insert_image(&hidden, &features)?;
                truth.push(&hidden, &qid, truth_answer);
                let filler = displacement(&mut rng, &v, spec.semantic_dims, length, false);
                let filler: Vec<f64> = v.iter().zip(&filler).map(|(a, b)| a + b).collect();
                store.insert_image(&id, &filler)?;
                truth.push(&id, &qid, neighbor_answer);
            } else {
                store.insert_image(&id, &features)?;
                truth.push(
                    &id,
                    &qid,
                    if is_truth {
                        truth_answer
                    } else {
                        neighbor_answer
                    },
                );
            }
            ids.push(id);
        }
        let complement_id = labeled.then(|| {
            if asymmetric {
                hidden_truth_id(ex)
            } else {
                candidate_id(ex, rank)
            }
        });
        knn.insert(img.clone(), CandidateSet::new(ids)?);
        raw.push(RawExample {
            image_id: img.clone(),
            question_id: qid.clone(),
            answer_index: answer,
            complement_id,
            truth_answer_index: labeled.then_some(truth_answer),
        });
        truth.examples.push(ExampleTruth {
            image_id: img,
            question_id: qid,
            labeled,
            asymmetric,
            truth_rank: labeled.then_some(rank),
            cued,
        });
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        raw,
        knn,
        store,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::l2_distance;

    fn small(n: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_examples: n,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn rank_law_hits_target_mass() {
        let law = RankLaw::fit(24, 0.44).unwrap();
        assert!((law.top_mass(5) - 0.44).abs() < 1e-12);
        assert!(law.ratio > 0.0 && law.ratio < 1.0);
        assert_eq!(RankLaw::fit(24, 5.0 / 24.0).unwrap().ratio, 1.0);
        assert!(RankLaw::fit(24, 0.1).is_err());
    }

    #[test]
    fn infeasible_specs_rejected() {
        let s = SyntheticSpec {
            rank_skew: 0.1,
            ..small(10)
        };
        assert!(matches!(
            generate_synthetic(&s),
            Err(CxError::InfeasibleSpec(_))
        ));
        let s = SyntheticSpec { k: 1, ..small(10) };
        assert!(generate_synthetic(&s).is_err());
        let s = SyntheticSpec {
            same_answer_rate: 1.5,
            ..small(10)
        };
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn candidates_at_increasing_distance() {
        let data = generate_synthetic(&small(50)).unwrap();
        for r in &data.raw {
            let v = data.store.image(&r.image_id).unwrap();
            let cands = data.knn.get(&r.image_id).unwrap();
            let d: Vec<f64> = cands
                .ids()
                .iter()
                .map(|c| {
                    l2_distance(v.as_slice(), data.store.image(c).unwrap().as_slice()).unwrap()
                })
                .collect();
            assert!(d.windows(2).all(|w| w[1] > w[0] + 1e-9), "{d:?}");
        }
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let a = generate_synthetic(&small(40)).unwrap();
        let b = generate_synthetic(&small(40)).unwrap();
        assert_eq!(a.store.to_bytes(), b.store.to_bytes());
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic(&SyntheticSpec {
            seed: 12,
            ..small(40)
        })
        .unwrap();
        assert_ne!(a.store.to_bytes(), c.store.to_bytes());
    }

    #[test]
    fn planted_truth_consistent_with_manifest() {
        let data = generate_synthetic(&small(300)).unwrap();
        let m = data.build().unwrap();
        assert!(m.counts.is_consistent());
        let mut differing = 0;
        for ex in &m.examples {
            let t = ex.truth_index.unwrap();
            let planted = data
                .truth
                .planted_answer(ex.candidates.get(t), &ex.question_id)
                .unwrap();
            assert_eq!(Some(planted), ex.truth_answer_index);
            assert_eq!(
                data.truth.planted_answer(&ex.image_id, &ex.question_id),
                Some(ex.answer_index)
            );
            if planted != ex.answer_index {
                differing += 1;
            }
        }
        assert!(differing > m.len() * 8 / 10);
        // build_dataset is idempotent on its own output.
        let (raw, knn) = crate::data::manifest::to_raw(&m);
        let again = build_dataset(&raw, &knn).unwrap();
        assert_eq!(
            again.counts.dropped_knn_asymmetry + again.counts.dropped_no_complement,
            0
        );
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let data = generate_synthetic(&small(5)).unwrap();
        let back = GeneratorTruth::from_text(&data.truth.to_text().unwrap()).unwrap();
        assert_eq!(back.planted(), data.truth.planted());
    }

    #[test]
    fn answer_clusters_give_cossim_structure() {
        let t = answer_embeddings(&small(1)).unwrap();
        let sims = t.cossim_row(3);
        let same: Vec<f64> = (0..200)
            .filter(|a| a % 10 == 3 && *a != 3)
            .map(|a| sims[a])
            .collect();
        let other: Vec<f64> = (0..200).filter(|a| a % 10 != 3).map(|a| sims[a]).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) > mean(&other) + 0.3);
    }
}
