//! File formats. Every reader reports the offending path; writers create
//! missing parent directories.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub mod ckpt;
pub mod maps;
pub mod pfm;
pub mod png;
pub mod text;
pub mod vism;

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let b = read_file(path)?;
    String::from_utf8(b).map_err(|_| Error::format(path, "not UTF-8 text"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `base` with `suffix` appended verbatim (`with_extension` would eat dots
/// in the stem).
pub fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
