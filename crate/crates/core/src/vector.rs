//! Dense vector types and the small math kernel used by every scorer.
//!
//! Dot products and squared-norm sums accumulate in `f64` whatever the
//! storage scalar is.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{CxError, Result};
use crate::real::Real;

/// Tolerance on the total mass of an [`AnswerDistribution`].
pub const DIST_SUM_TOLERANCE: f64 = 1e-5;

/// A finite, non-empty dense feature vector (image features, question
/// embeddings, and the derived visual features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<T = f64> {
    values: Vec<T>,
}

/// A VQA model's internal joint image/question representation.
pub type MultimodalEmbedding<T = f64> = FeatureVector<T>;

impl<T: Real> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(CxError::InvalidArgument(
                "feature vector must have dim >= 1".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CxError::NonFinite(format!("feature vector component {i}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn cast<U: Real>(&self) -> FeatureVector<U> {
        FeatureVector {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T> AsRef<[T]> for FeatureVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CxError::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum())
}

pub fn norm<T: Real>(a: &[T]) -> f64 {
    a.iter()
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// `a·b / (‖a‖‖b‖)`. A zero vector on either side is an error.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    let ab = dot(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(CxError::ZeroVector);
    }
    Ok(T::of((ab / (na * nb)).clamp(-1.0, 1.0)))
}

pub fn l2_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(T::of(sq.sqrt()))
}

pub fn pointwise_product<T: Real>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_dims(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| *x * *y).collect())
}

/// A probability vector over the answer vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AnswerDistribution {
    probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CxError::InvalidArgument(
                "answer distribution is empty".into(),
            ));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(CxError::InvalidArgument(format!(
                "answer probability {i} is {}",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_SUM_TOLERANCE {
            return Err(CxError::InvalidArgument(format!(
                "answer distribution sums to {total}"
            )));
        }
        Ok(Self { probs })
    }

    /// Numerically stable softmax of finite logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits))
    }

    pub fn onehot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(CxError::InvalidArgument(format!(
                "onehot index {index} >= {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, answer: usize) -> f64 {
        self.probs[answer]
    }

    /// Index of the most probable answer; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for AnswerDistribution {
    type Error = CxError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AnswerDistribution> for Vec<f64> {
    fn from(d: AnswerDistribution) -> Self {
        d.probs
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The answer embedding matrix: one row per answer class.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerEmbeddingTable {
    rows: Array2<f64>,
}

impl AnswerEmbeddingTable {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(CxError::InvalidArgument(
                "answer embedding table is empty".into(),
            ));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CxError::NonFinite(format!("answer embedding row {i}")));
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(CxError::InvalidArgument(format!(
                    "answer embedding row {i} is all zero"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(CxError::InvalidArgument(format!(
                    "answer embedding row {i} has dim {} (expected {d})",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        let rows = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| CxError::InvalidArgument(e.to_string()))?;
        Self::new(rows)
    }

    pub fn n_answers(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, answer: usize) -> ArrayView1<'_, f64> {
        self.rows.row(answer)
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Row-wise cosine similarity of every answer against `answer`.
    pub fn cossim_row(&self, answer: usize) -> Vec<f64> {
        let target = self.rows.row(answer);
        let tn = target.dot(&target).sqrt();
        self.rows
            .outer_iter()
            .map(|r| (r.dot(&target) / (r.dot(&r).sqrt() * tn)).clamp(-1.0, 1.0))
            .collect()
    }
}

/// `Σₐ P(a)·row_a`.
pub fn expected_embedding(
    table: &AnswerEmbeddingTable,
    dist: &AnswerDistribution,
) -> Result<FeatureVector<f64>> {
    check_dims(table.n_answers(), dist.len())?;
    let probs = ArrayView1::from(dist.probs());
    let out = table.rows.t().dot(&probs);
    FeatureVector::new(out.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_examples() {
        assert!(close(
            cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(),
            1.0,
            1e-12
        ));
        assert!(close(
            cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            0.0,
            1e-12
        ));
        assert!(close(
            cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-12
        ));
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0, 0.0], &[1.0]),
            Err(CxError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(CxError::ZeroVector)
        ));
    }

    #[test]
    fn l2_examples() {
        assert!(close(
            l2_distance(&[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            2.82842712,
            1e-8
        ));
        assert_eq!(l2_distance(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(
            l2_distance(&[0.0, 0.0, 0.0], &[0.0, 3.0, 4.0]).unwrap(),
            5.0
        );
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(
            pointwise_product(&[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            vec![3.0, 8.0]
        );
        let x = [0.5f32, -1.5, 2.0];
        assert_eq!(pointwise_product(&x, &[1.0; 3]).unwrap(), x.to_vec());
        assert_eq!(pointwise_product(&x, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(pointwise_product(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn expected_embedding_examples() {
        let t = AnswerEmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = AnswerDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(
            expected_embedding(&t, &d).unwrap().as_slice(),
            &[0.25, 0.75]
        );

        let t = AnswerEmbeddingTable::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let d = AnswerDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(expected_embedding(&t, &d).unwrap().as_slice(), &[1.0, 2.0]);

        let t = AnswerEmbeddingTable::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]])
            .unwrap();
        let d = AnswerDistribution::onehot(3, 1).unwrap();
        assert_eq!(expected_embedding(&t, &d).unwrap().as_slice(), &[3.0, 4.0]);

        let d = AnswerDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            expected_embedding(&t, &d),
            Err(CxError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn table_rejects_zero_row() {
        assert!(AnswerEmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(AnswerDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(AnswerDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(AnswerDistribution::new(vec![0.5, 0.5 + 5e-6]).is_ok());
        let d = AnswerDistribution::from_logits(&[1000.0, 0.0, -1000.0]).unwrap();
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn feature_vector_rejects_nan() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::<f32>::new(vec![]).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0f64..10.0, 3)
        }

        fn nonzero(v: &[f64]) -> bool {
            norm(v) > 1e-6
        }

        proptest! {
            #[test]
            fn cosine_symmetric_bounded(a in vec3(), b in vec3()) {
                prop_assume!(nonzero(&a) && nonzero(&b));
                let ab = cosine_similarity(&a, &b).unwrap();
                let ba = cosine_similarity(&b, &a).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ab.abs() <= 1.0 + 1e-12);
            }

            #[test]
            fn cosine_scale_invariant(a in vec3(), b in vec3(), c in 0.01f64..100.0) {
                prop_assume!(nonzero(&a) && nonzero(&b));
                let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
                let d = cosine_similarity(&scaled, &b).unwrap() - cosine_similarity(&a, &b).unwrap();
                prop_assert!(d.abs() < 1e-9);
            }

            #[test]
            fn l2_triangle(a in vec3(), b in vec3(), c in vec3()) {
                let ab = l2_distance(&a, &b).unwrap();
                let bc = l2_distance(&b, &c).unwrap();
                let ac = l2_distance(&a, &c).unwrap();
                prop_assert!(ac <= ab + bc + 1e-9);
            }
        }
    }
}
