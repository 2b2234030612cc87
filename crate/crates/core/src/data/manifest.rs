//! Raw and filtered example manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl;
use crate::error::{CxError, FormatError, Result};
use crate::io::{read_string, write_atomic};
use crate::types::{CandidateSet, CxExample};

pub const MANIFEST_MAGIC: &str = "CXMANIFEST";
pub const RAW_MAGIC: &str = "CXRAW";
pub const KNN_MAGIC: &str = "CXKNN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub total: usize,
    pub kept: usize,
    pub dropped_no_complement: usize,
    pub dropped_knn_asymmetry: usize,
}

impl DatasetCounts {
    pub fn is_consistent(&self) -> bool {
        self.kept + self.dropped_no_complement + self.dropped_knn_asymmetry == self.total
    }
}

/// The filtered, labeled examples of one split plus filtering bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub counts: DatasetCounts,
    pub examples: Vec<CxExample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    split: Split,
    counts: DatasetCounts,
}

impl DatasetManifest {
    /// A manifest over already-filtered examples (counts report nothing dropped).
    pub fn from_examples(split: Split, examples: Vec<CxExample>) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            ex.validate().map_err(|e| FormatError::MalformedRecord {
                index: i,
                reason: e.to_string(),
            })?;
            if ex.truth_index.is_none() {
                return Err(FormatError::MalformedRecord {
                    index: i,
                    reason: "kept example without truth".into(),
                }
                .into());
            }
        }
        let n = examples.len();
        Ok(Self {
            split,
            counts: DatasetCounts {
                total: n,
                kept: n,
                ..Default::default()
            },
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_text(&self) -> Result<String> {
        jsonl::encode(
            MANIFEST_MAGIC,
            &ManifestHeader {
                split: self.split,
                counts: self.counts,
            },
            &self.examples,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, examples): (ManifestHeader, Vec<CxExample>) = jsonl::decode(MANIFEST_MAGIC, text)?;
        for (i, ex) in examples.iter().enumerate() {
            ex.validate().map_err(|e| FormatError::MalformedRecord {
                index: i,
                reason: e.to_string(),
            })?;
        }
        if !h.counts.is_consistent() || h.counts.kept != examples.len() {
            return Err(FormatError::MalformedRecord {
                index: 0,
                reason: format!(
                    "header counts {:?} disagree with {} records",
                    h.counts,
                    examples.len()
                ),
            }
            .into());
        }
        Ok(Self {
            split: h.split,
            counts: h.counts,
            examples,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&read_string(path)?)
    }
}

/// An unfiltered example: the complement is referenced by image id and may
/// be absent or missing from the image's neighbor list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub image_id: String,
    pub question_id: String,
    pub answer_index: usize,
    pub complement_id: Option<String>,
    pub truth_answer_index: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountHeader {
    count: usize,
}

pub fn raw_to_text(raw: &[RawExample]) -> Result<String> {
    jsonl::encode(RAW_MAGIC, &CountHeader { count: raw.len() }, raw)
}

pub fn raw_from_text(text: &str) -> Result<Vec<RawExample>> {
    let (h, raw): (CountHeader, Vec<RawExample>) = jsonl::decode(RAW_MAGIC, text)?;
    if h.count != raw.len() {
        return Err(FormatError::MalformedRecord {
            index: raw.len(),
            reason: format!("header declares {} records, found {}", h.count, raw.len()),
        }
        .into());
    }
    Ok(raw)
}

pub fn write_raw(path: &Path, raw: &[RawExample]) -> Result<()> {
    write_atomic(path, raw_to_text(raw)?.as_bytes())
}

pub fn read_raw(path: &Path) -> Result<Vec<RawExample>> {
    raw_from_text(&read_string(path)?)
}

/// Per-image nearest-neighbor lists, closest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnnLists {
    lists: BTreeMap<String, CandidateSet>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KnnRecord {
    image_id: String,
    neighbors: CandidateSet,
}

impl KnnLists {
    pub fn insert(&mut self, image_id: impl Into<String>, neighbors: CandidateSet) {
        self.lists.insert(image_id.into(), neighbors);
    }

    pub fn get(&self, image_id: &str) -> Option<&CandidateSet> {
        self.lists.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn to_text(&self) -> Result<String> {
        let records: Vec<KnnRecord> = self
            .lists
            .iter()
            .map(|(k, v)| KnnRecord {
                image_id: k.clone(),
                neighbors: v.clone(),
            })
            .collect();
        jsonl::encode(
            KNN_MAGIC,
            &CountHeader {
                count: records.len(),
            },
            &records,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, records): (CountHeader, Vec<KnnRecord>) = jsonl::decode(KNN_MAGIC, text)?;
        if h.count != records.len() {
            return Err(CxError::Format(FormatError::MalformedRecord {
                index: records.len(),
                reason: format!(
                    "header declares {} records, found {}",
                    h.count,
                    records.len()
                ),
            }));
        }
        let mut out = KnnLists::default();
        for (index, r) in records.into_iter().enumerate() {
            if out.lists.insert(r.image_id.clone(), r.neighbors).is_some() {
                return Err(FormatError::MalformedRecord {
                    index,
                    reason: format!("duplicate image {}", r.image_id),
                }
                .into());
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&read_string(path)?)
    }
}

/// Keep only examples whose labeled complement appears in their own
/// neighbor list; input order is preserved.
pub fn build_dataset(raw: &[RawExample], knn: &KnnLists) -> Result<DatasetManifest> {
    let mut counts = DatasetCounts {
        total: raw.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    for (index, r) in raw.iter().enumerate() {
        let malformed =
            |reason: String| CxError::Format(FormatError::MalformedRecord { index, reason });
        let candidates = knn
            .get(&r.image_id)
            .ok_or_else(|| malformed(format!("no neighbor list for image {}", r.image_id)))?;
        let Some(complement) = &r.complement_id else {
            counts.dropped_no_complement += 1;
            continue;
        };
        let Some(truth_index) = candidates.position(complement) else {
            counts.dropped_knn_asymmetry += 1;
            continue;
        };
        examples.push(CxExample {
            image_id: r.image_id.clone(),
            question_id: r.question_id.clone(),
            answer_index: r.answer_index,
            candidates: candidates.clone(),
            truth_index: Some(truth_index),
            truth_answer_index: r.truth_answer_index,
        });
    }
    counts.kept = examples.len();
    Ok(DatasetManifest {
        split: Split::All,
        counts,
        examples,
    })
}

/// Inverse of [`build_dataset`] for already-kept examples.
pub fn to_raw(manifest: &DatasetManifest) -> (Vec<RawExample>, KnnLists) {
    let mut knn = KnnLists::default();
    let raw = manifest
        .examples
        .iter()
        .map(|ex| {
            knn.insert(ex.image_id.clone(), ex.candidates.clone());
            RawExample {
                image_id: ex.image_id.clone(),
                question_id: ex.question_id.clone(),
                answer_index: ex.answer_index,
                complement_id: ex.truth_index.map(|t| ex.candidates.get(t).to_string()),
                truth_answer_index: ex.truth_answer_index,
            }
        })
        .collect();
    (raw, knn)
}
