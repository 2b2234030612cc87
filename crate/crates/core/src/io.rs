//! Small file helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CxError, Result};

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CxError::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CxError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CxError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CxError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CxError::io(path, e))
}

pub fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CxError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CxError::io(path, e))
}
