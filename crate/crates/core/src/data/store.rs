//! Precomputed feature records and their binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   : "CXFS" | version u16 | section count u32 | crc32(previous 10 bytes) u32
//! section  : kind u8 | record count u64 | dim u32 | record*
//! record   : key | dim x f32
//! key      : len u32 | UTF-8 bytes            (image, question, answer sections)
//!            key key                          (answer-distribution and Z sections:
//!                                              image id then question id)
//! ```
//!
//! Section kinds: 1 image features, 2 question embeddings, 3 answer
//! distributions, 4 multimodal embeddings, 5 answer embedding table (records
//! in answer-index order, keyed by answer label).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::data::manifest::DatasetManifest;
use crate::error::{CxError, FormatError, Result};
use crate::io::{read_all, write_atomic};
use crate::vector::{AnswerDistribution, AnswerEmbeddingTable, FeatureVector};

pub const STORE_MAGIC: [u8; 4] = *b"CXFS";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum SectionKind {
    Image = 1,
    Question = 2,
    AnswerDist = 3,
    Multimodal = 4,
    AnswerTable = 5,
}

impl SectionKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Image,
            2 => Self::Question,
            3 => Self::AnswerDist,
            4 => Self::Multimodal,
            5 => Self::AnswerTable,
            _ => return None,
        })
    }

    fn pair_keyed(self) -> bool {
        matches!(self, Self::AnswerDist | Self::Multimodal)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Section<K: Ord> {
    dim: usize,
    records: BTreeMap<K, Vec<f32>>,
}

impl<K: Ord> Section<K> {
    fn insert(&mut self, what: &str, key: K, values: Vec<f32>) -> Result<()> {
        if values.is_empty() {
            return Err(CxError::InvalidArgument(format!("{what} record has dim 0")));
        }
        if self.records.is_empty() && self.dim == 0 {
            self.dim = values.len();
        } else if values.len() != self.dim {
            return Err(FormatError::DimMismatch(format!(
                "{what} record has dim {} but section dim is {}",
                values.len(),
                self.dim
            ))
            .into());
        }
        self.records.insert(key, values);
        Ok(())
    }
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|v| *v as f32).collect()
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|v| f64::from(*v)).collect()
}

/// Precomputed image features, question embeddings, optional VQA outputs,
/// and the answer embedding table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    images: Section<String>,
    questions: Section<String>,
    dists: Section<(String, String)>,
    zs: Section<(String, String)>,
    answer_labels: Vec<String>,
    answer_rows: Vec<Vec<f32>>,
    answer_table: Option<AnswerEmbeddingTable>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.images.records.is_empty()
            && self.questions.records.is_empty()
            && self.dists.records.is_empty()
            && self.zs.records.is_empty()
            && self.answer_rows.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.images.dim
    }

    pub fn question_dim(&self) -> usize {
        self.questions.dim
    }

    pub fn z_dim(&self) -> usize {
        self.zs.dim
    }

    pub fn n_images(&self) -> usize {
        self.images.records.len()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.records.len()
    }

    pub fn n_oracle_records(&self) -> usize {
        self.dists.records.len()
    }

    pub fn insert_image(&mut self, id: impl Into<String>, values: &[f64]) -> Result<()> {
        self.images.insert("image", id.into(), to_f32(values))
    }

    pub fn insert_question(&mut self, id: impl Into<String>, values: &[f64]) -> Result<()> {
        self.questions.insert("question", id.into(), to_f32(values))
    }

    /// Record a VQA model's output for one (image, question) pair.
    pub fn insert_oracle_output(
        &mut self,
        image_id: impl Into<String>,
        question_id: impl Into<String>,
        dist: &AnswerDistribution,
        z: &[f64],
    ) -> Result<()> {
        let key = (image_id.into(), question_id.into());
        self.dists
            .insert("answer distribution", key.clone(), to_f32(dist.probs()))?;
        self.zs.insert("multimodal embedding", key, to_f32(z))
    }

    /// Install the answer table; values are stored at 32-bit precision and
    /// [`Self::answer_table`] returns exactly what a reader will see.
    pub fn set_answer_table(
        &mut self,
        labels: Vec<String>,
        table: &AnswerEmbeddingTable,
    ) -> Result<()> {
        if labels.len() != table.n_answers() {
            return Err(CxError::DimensionMismatch {
                expected: table.n_answers(),
                got: labels.len(),
            });
        }
        let rows: Vec<Vec<f32>> = table
            .rows()
            .outer_iter()
            .map(|r| r.iter().map(|v| *v as f32).collect())
            .collect();
        self.install_answers(labels, rows)
    }

    fn install_answers(&mut self, labels: Vec<String>, rows: Vec<Vec<f32>>) -> Result<()> {
        let d = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flat_map(|r| to_f64(r)).collect();
        let arr = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| FormatError::DimMismatch(format!("answer table: {e}")))?;
        self.answer_table = Some(AnswerEmbeddingTable::new(arr)?);
        self.answer_labels = labels;
        self.answer_rows = rows;
        Ok(())
    }

    pub fn answer_table(&self) -> Result<&AnswerEmbeddingTable> {
        self.answer_table
            .as_ref()
            .ok_or_else(|| CxError::Missing("answer embedding table".into()))
    }

    pub fn answer_labels(&self) -> &[String] {
        &self.answer_labels
    }

    pub fn image(&self, id: &str) -> Result<FeatureVector> {
        let v = self
            .images
            .records
            .get(id)
            .ok_or_else(|| CxError::Missing(format!("image features for {id}")))?;
        FeatureVector::new(to_f64(v))
    }

    pub fn has_image(&self, id: &str) -> bool {
        self.images.records.contains_key(id)
    }

    pub fn question(&self, id: &str) -> Result<FeatureVector> {
        let v = self
            .questions
            .records
            .get(id)
            .ok_or_else(|| CxError::Missing(format!("question embedding for {id}")))?;
        FeatureVector::new(to_f64(v))
    }

    pub fn oracle_output(
        &self,
        image_id: &str,
        question_id: &str,
    ) -> Result<(AnswerDistribution, FeatureVector)> {
        let key = (image_id.to_string(), question_id.to_string());
        let missing = || CxError::Missing(format!("oracle output for ({image_id}, {question_id})"));
        let p = self.dists.records.get(&key).ok_or_else(missing)?;
        let z = self.zs.records.get(&key).ok_or_else(missing)?;
        Ok((
            AnswerDistribution::new(to_f64(p))?,
            FeatureVector::new(to_f64(z))?,
        ))
    }

    /// Check that every id referenced by `manifest` resolves.
    pub fn validate_against(&self, manifest: &DatasetManifest) -> Result<()> {
        let n_answers = self.answer_table()?.n_answers();
        for (index, ex) in manifest.examples.iter().enumerate() {
            let bad =
                |reason: String| CxError::Format(FormatError::MalformedRecord { index, reason });
            for id in std::iter::once(ex.image_id.as_str())
                .chain(ex.candidates.ids().iter().map(String::as_str))
            {
                if !self.has_image(id) {
                    return Err(bad(format!("no image features for {id}")));
                }
            }
            if !self.questions.records.contains_key(&ex.question_id) {
                return Err(bad(format!("no question embedding for {}", ex.question_id)));
            }
            if ex.answer_index >= n_answers {
                return Err(bad(format!(
                    "answer index {} >= vocabulary size {n_answers}",
                    ex.answer_index
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let mut n_sections = 0u32;
        let mut section = |kind: SectionKind, dim: usize, records: Vec<(Vec<&str>, &[f32])>| {
            if records.is_empty() {
                return;
            }
            n_sections += 1;
            body.push(kind as u8);
            body.extend_from_slice(&(records.len() as u64).to_le_bytes());
            body.extend_from_slice(&(dim as u32).to_le_bytes());
            for (keys, payload) in records {
                for k in keys {
                    body.extend_from_slice(&(k.len() as u32).to_le_bytes());
                    body.extend_from_slice(k.as_bytes());
                }
                for v in payload {
                    body.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        section(
            SectionKind::Image,
            self.images.dim,
            self.images
                .records
                .iter()
                .map(|(k, v)| (vec![k.as_str()], v.as_slice()))
                .collect(),
        );
        section(
            SectionKind::Question,
            self.questions.dim,
            self.questions
                .records
                .iter()
                .map(|(k, v)| (vec![k.as_str()], v.as_slice()))
                .collect(),
        );
        section(
            SectionKind::AnswerDist,
            self.dists.dim,
            self.dists
                .records
                .iter()
                .map(|((i, q), v)| (vec![i.as_str(), q.as_str()], v.as_slice()))
                .collect(),
        );
        section(
            SectionKind::Multimodal,
            self.zs.dim,
            self.zs
                .records
                .iter()
                .map(|((i, q), v)| (vec![i.as_str(), q.as_str()], v.as_slice()))
                .collect(),
        );
        section(
            SectionKind::AnswerTable,
            self.answer_rows.first().map_or(0, Vec::len),
            self.answer_labels
                .iter()
                .zip(&self.answer_rows)
                .map(|(k, v)| (vec![k.as_str()], v.as_slice()))
                .collect(),
        );

        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&n_sections.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != STORE_MAGIC {
            return Err(FormatError::BadMagic {
                expected: STORE_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.u16()?;
        if version != STORE_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: STORE_VERSION,
            }
            .into());
        }
        let n_sections = r.u32()?;
        let computed = crc32fast::hash(&bytes[..10]);
        let stored = r.u32()?;
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed }.into());
        }

        let mut store = FeatureStore::default();
        let mut seen = [false; 6];
        for _ in 0..n_sections {
            let section_offset = r.pos as u64;
            let kind_byte = r.u8()?;
            let kind = SectionKind::from_u8(kind_byte).ok_or(FormatError::UnknownSection {
                kind: kind_byte,
                offset: section_offset,
            })?;
            if std::mem::replace(&mut seen[kind as usize], true) {
                return Err(FormatError::DimMismatch(format!(
                    "duplicate section kind {kind_byte}"
                ))
                .into());
            }
            let count = r.u64()?;
            let dim = r.u32()? as usize;
            if count > 0 && dim == 0 {
                return Err(FormatError::DimMismatch(format!(
                    "section kind {kind_byte} has records of dim 0"
                ))
                .into());
            }
            let mut answer_labels = Vec::new();
            let mut answer_rows = Vec::new();
            for _ in 0..count {
                let k1 = r.key()?;
                let k2 = if kind.pair_keyed() {
                    Some(r.key()?)
                } else {
                    None
                };
                let payload = r.f32s(dim)?;
                match kind {
                    SectionKind::Image => store.images.insert("image", k1, payload)?,
                    SectionKind::Question => store.questions.insert("question", k1, payload)?,
                    SectionKind::AnswerDist => {
                        store
                            .dists
                            .insert("answer distribution", (k1, k2.unwrap()), payload)?
                    }
                    SectionKind::Multimodal => {
                        store
                            .zs
                            .insert("multimodal embedding", (k1, k2.unwrap()), payload)?
                    }
                    SectionKind::AnswerTable => {
                        answer_labels.push(k1);
                        answer_rows.push(payload);
                    }
                }
            }
            if kind == SectionKind::AnswerTable {
                store.install_answers(answer_labels, answer_rows)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: r.pos as u64,
            }
            .into());
        }
        if let Some(t) = &store.answer_table {
            if !store.dists.records.is_empty() && store.dists.dim != t.n_answers() {
                return Err(FormatError::DimMismatch(format!(
                    "answer distributions have dim {} but the answer table has {} rows",
                    store.dists.dim,
                    t.n_answers()
                ))
                .into());
            }
        }
        if store.dists.records.len() != store.zs.records.len() {
            return Err(FormatError::DimMismatch(format!(
                "{} answer distributions but {} multimodal embeddings",
                store.dists.records.len(),
                store.zs.records.len()
            ))
            .into());
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(FormatError::Truncated {
                offset: self.bytes.len() as u64,
                needed: n - left,
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn key(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let offset = self.pos as u64;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::BadKey { offset }.into())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureStore {
        let mut s = FeatureStore::new();
        s.insert_image("img0", &[1.0, -2.5, 3.25]).unwrap();
        s.insert_image("img1", &[0.1, 0.2, 0.3]).unwrap();
        s.insert_question("q0", &[0.5, 0.25]).unwrap();
        let table =
            AnswerEmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]])
                .unwrap();
        s.set_answer_table(vec!["yes".into(), "no".into(), "two".into()], &table)
            .unwrap();
        let d = AnswerDistribution::new(vec![0.25, 0.5, 0.25]).unwrap();
        s.insert_oracle_output("img0", "q0", &d, &[1.0, 2.0, 3.0, 4.0])
            .unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(
            back.oracle_output("img0", "q0").unwrap().0.probs(),
            &[0.25, 0.5, 0.25]
        );
    }

    #[test]
    fn empty_store_round_trips() {
        let bytes = FeatureStore::new().to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert!(FeatureStore::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn corruptions_have_distinct_errors() {
        let bytes = sample().to_bytes();

        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(
            FeatureStore::from_bytes(&b),
            Err(CxError::Format(FormatError::BadMagic { .. }))
        ));

        let mut b = bytes.clone();
        b[4] = 7;
        assert!(matches!(
            FeatureStore::from_bytes(&b),
            Err(CxError::Format(FormatError::UnsupportedVersion {
                found: 7,
                ..
            }))
        ));

        let mut b = bytes.clone();
        b[11] ^= 0xff;
        assert!(matches!(
            FeatureStore::from_bytes(&b),
            Err(CxError::Format(FormatError::ChecksumMismatch { .. }))
        ));

        let cut = bytes.len() - 5;
        match FeatureStore::from_bytes(&bytes[..cut]) {
            Err(CxError::Format(FormatError::Truncated { offset, .. })) => {
                assert_eq!(offset, cut as u64)
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dim_inconsistency_rejected() {
        let mut s = sample();
        assert!(matches!(
            s.insert_image("img2", &[1.0]),
            Err(CxError::Format(FormatError::DimMismatch(_)))
        ));
    }

    #[test]
    fn missing_lookup_is_error() {
        let s = sample();
        assert!(matches!(s.image("nope"), Err(CxError::Missing(_))));
        assert!(matches!(
            s.oracle_output("img1", "q0"),
            Err(CxError::Missing(_))
        ));
    }
}
