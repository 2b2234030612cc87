//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `CXCK`, version u16, u32 length plus JSON
//! header (config, mask, best epoch), u32 tensor count, then per tensor a
//! u32 rank, u64 dims, and f64 values in row-major order. Two optional
//! blocks follow, each behind a u8 flag: oracle weights (three tensors) and
//! Adam state (u64 step count, then the m and v tensors). A CRC32 of every
//! preceding byte closes the file.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::NeuralCxConfig;
use super::features::AblationMask;
use super::mlp::{Layer, MlpParams};
use super::train::{Mlp, TrainedModel};
use crate::error::{CxError, FormatError, Result};
use crate::io::{read_all, write_atomic};
use crate::oracle::ProjectionParams;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CXCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NeuralCxConfig,
    mask: AblationMask,
    best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NeuralCxConfig,
    pub mask: AblationMask,
    pub best_epoch: usize,
    pub params: Mlp,
    pub oracle_params: Option<ProjectionParams>,
    pub adam: Option<AdamState<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, with_adam: bool) -> Self {
        Self {
            config: model.config.clone(),
            mask: model.mask,
            best_epoch: model.best_epoch,
            params: model.params.clone(),
            oracle_params: model.oracle_params.clone(),
            adam: with_adam.then(|| model.adam.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            mask: self.mask,
            best_epoch: self.best_epoch,
        })?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&((self.params.layers.len() * 2) as u32).to_le_bytes());
        for l in &self.params.layers {
            put_tensor(
                &mut out,
                &[l.w.nrows(), l.w.ncols()],
                l.w.as_slice().expect("contiguous"),
            );
            put_tensor(&mut out, &[l.b.len()], l.b.as_slice().expect("contiguous"));
        }
        match &self.oracle_params {
            Some(p) => {
                out.push(1);
                for w in [&p.w_v, &p.w_q, &p.w_o] {
                    put_tensor(
                        &mut out,
                        &[w.nrows(), w.ncols()],
                        w.as_slice().expect("contiguous"),
                    );
                }
            }
            None => out.push(0),
        }
        match &self.adam {
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.t.to_le_bytes());
                out.extend_from_slice(&(a.m.len() as u32).to_le_bytes());
                for t in a.m.iter().chain(&a.v) {
                    put_tensor(&mut out, &[t.len()], t);
                }
            }
            None => out.push(0),
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            }
            .into());
        }
        if bytes.len() < 10 {
            return Err(FormatError::Truncated {
                offset: bytes.len() as u64,
                needed: 10 - bytes.len(),
            }
            .into());
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed }.into());
        }
        let mut r = Reader {
            bytes: &bytes[..body_end],
            pos: r.pos,
        };
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let n = r.u32()? as usize;
        if n < 4 || !n.is_multiple_of(2) {
            return Err(FormatError::DimMismatch(format!("{n} network tensors")).into());
        }
        let mut layers = Vec::with_capacity(n / 2);
        for _ in 0..n / 2 {
            let w = r.matrix()?;
            let b = Array1::from(r.tensor(1)?.1);
            if b.len() != w.nrows() {
                return Err(FormatError::DimMismatch(format!(
                    "bias {} for {} units",
                    b.len(),
                    w.nrows()
                ))
                .into());
            }
            if let Some(prev) = layers.last().map(|l: &Layer<f64>| l.w.nrows()) {
                if prev != w.ncols() {
                    return Err(FormatError::DimMismatch(format!(
                        "layer input {} after {prev} units",
                        w.ncols()
                    ))
                    .into());
                }
            }
            layers.push(Layer { w, b });
        }
        let params = MlpParams { layers };
        if params.layers.last().map(|l| l.w.nrows()) != Some(1) {
            return Err(FormatError::DimMismatch("output layer must have one unit".into()).into());
        }
        let oracle_params = match r.u8()? {
            0 => None,
            1 => Some(ProjectionParams {
                w_v: r.matrix()?,
                w_q: r.matrix()?,
                w_o: r.matrix()?,
            }),
            f => {
                return Err(FormatError::MalformedRecord {
                    index: 0,
                    reason: format!("oracle flag {f}"),
                }
                .into())
            }
        };
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let count = r.u32()? as usize;
                let mut read = || {
                    (0..count)
                        .map(|_| r.tensor(1).map(|(_, v)| v))
                        .collect::<Result<Vec<_>>>()
                };
                let m = read()?;
                let v = read()?;
                Some(AdamState { m, v, t })
            }
            f => {
                return Err(FormatError::MalformedRecord {
                    index: 0,
                    reason: format!("adam flag {f}"),
                }
                .into())
            }
        };
        if r.pos != r.bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: r.pos as u64,
            }
            .into());
        }
        Ok(Self {
            config: header.config,
            mask: header.mask,
            best_epoch: header.best_epoch,
            params,
            oracle_params,
            adam,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }
}

fn put_tensor(out: &mut Vec<u8>, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(FormatError::Truncated {
                offset: self.pos as u64,
                needed: n - remaining,
            }
            .into());
        }
        let end = self.pos + n;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self, rank: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let offset = self.pos;
        let got = self.u32()? as usize;
        if got != rank {
            return Err(FormatError::DimMismatch(format!(
                "rank {got} tensor at offset {offset}, expected {rank}"
            ))
            .into());
        }
        let dims = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let n = n.filter(|n| n.checked_mul(8).is_some()).ok_or_else(|| {
            CxError::from(FormatError::DimMismatch(format!(
                "tensor dims {dims:?} overflow"
            )))
        })?;
        let raw = self.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((dims, values))
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let (dims, values) = self.tensor(2)?;
        Ok(Array2::from_shape_vec((dims[0], dims[1]), values).expect("length checked"))
    }
}
