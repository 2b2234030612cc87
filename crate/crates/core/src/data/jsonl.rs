//! Line-delimited record files with a checksummed header line.
//!
//! ```text
//! <MAGIC> <version> <crc32 of header json, 8 hex digits> <header json>
//! <record json>
//! ...
//! ```
//! UTF-8, LF line endings, one record per line.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{FormatError, Result};

pub const JSONL_VERSION: u16 = 1;

pub fn encode<H: Serialize, R: Serialize>(
    magic: &str,
    header: &H,
    records: &[R],
) -> Result<String> {
    let header_json = serde_json::to_string(header)?;
    let crc = crc32fast::hash(header_json.as_bytes());
    let mut out = format!("{magic} {JSONL_VERSION} {crc:08x} {header_json}\n");
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned, R: DeserializeOwned>(
    magic: &str,
    text: &str,
) -> Result<(H, Vec<R>)> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(FormatError::Truncated {
        offset: 0,
        needed: magic.len(),
    })?;
    let mut parts = first.splitn(4, ' ');
    let found = parts.next().unwrap_or_default();
    if found != magic {
        let mut f = [0u8; 4];
        for (d, s) in f.iter_mut().zip(found.bytes()) {
            *d = s;
        }
        let mut e = [0u8; 4];
        for (d, s) in e.iter_mut().zip(magic.bytes()) {
            *d = s;
        }
        return Err(FormatError::BadMagic {
            expected: e,
            found: f,
        }
        .into());
    }
    let header_err = |reason: &str| FormatError::MalformedRecord {
        index: 0,
        reason: format!("header: {reason}"),
    };
    let version: u16 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| header_err("missing version"))?;
    if version != JSONL_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: JSONL_VERSION,
        }
        .into());
    }
    let stored = parts
        .next()
        .and_then(|c| u32::from_str_radix(c, 16).ok())
        .ok_or_else(|| header_err("missing checksum"))?;
    let header_json = parts
        .next()
        .ok_or_else(|| header_err("missing header body"))?;
    let computed = crc32fast::hash(header_json.as_bytes());
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed }.into());
    }
    let header: H = serde_json::from_str(header_json).map_err(|e| header_err(&e.to_string()))?;
    let mut records = Vec::new();
    for (index, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|e| FormatError::MalformedRecord {
            index,
            reason: e.to_string(),
        })?;
        records.push(r);
    }
    Ok((header, records))
}
