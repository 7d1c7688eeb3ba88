//! `manifest.json`: what a command read and wrote, with content hashes.
//! No timestamps or absolute paths, so identical runs give identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{read_file, read_text, write_file};
use crate::{Error, Result};

pub const FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    /// Relative to the manifest's directory when below it, else as given.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default)]
    pub notes: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<Entry>,
    pub outputs: Vec<Entry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_file(path)?)))
}

fn rel(root: &Path, p: &Path) -> String {
    let s = p.strip_prefix(root).unwrap_or(p);
    s.to_string_lossy().replace('\\', "/")
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: config_hash.into(),
            notes: Default::default(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, v: impl Into<serde_json::Value>) {
        self.notes.insert(key.into(), v.into());
    }

    /// Hashes and records files; sorted by path so output order never
    /// depends on how a command happened to write them.
    fn entries(root: &Path, paths: &[PathBuf]) -> Result<Vec<Entry>> {
        let mut v = paths
            .iter()
            .map(|p| Ok(Entry { path: rel(root, p), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v.dedup();
        Ok(v)
    }

    /// Writes `dir/manifest.json` and returns its path.
    pub fn write(mut self, dir: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<PathBuf> {
        self.inputs = Self::entries(dir, inputs)?;
        self.outputs = Self::entries(dir, outputs)?;
        let path = dir.join(FILE);
        let mut s = serde_json::to_string_pretty(&self).expect("manifest serializes");
        s.push('\n');
        write_file(&path, s.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Paths of missing outputs or outputs whose content changed.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|e| sha256_file(&dir.join(&e.path)).map(|h| h != e.sha256).unwrap_or(true))
            .map(|e| e.path.clone())
            .collect()
    }
}

/// Every regular file under `dir` except the manifest itself, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for ent in rd {
            let p = ent.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p != dir.join(FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_relative_sorted_and_checkable() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write_file(&d.join("b/x.txt"), b"x").unwrap();
        write_file(&d.join("a.txt"), b"a").unwrap();
        let mut m = Manifest::new("demo", 7, "abc");
        m.note("epochs", 3);
        let outs = files_under(d).unwrap();
        let path = m.write(d, &[], &outs).unwrap();
        let back = Manifest::read(&path).unwrap();
        let names: Vec<&str> = back.outputs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(names, ["a.txt", "b/x.txt"]);
        assert_eq!(back.outputs[0].sha256, hex::encode(Sha256::digest(b"a")));
        assert!(back.verify(d).is_empty());
        write_file(&d.join("a.txt"), b"changed").unwrap();
        assert_eq!(back.verify(d), ["a.txt"]);
        // a rewrite lists the same files, not the manifest itself
        assert_eq!(files_under(d).unwrap().len(), 2);
    }
}
