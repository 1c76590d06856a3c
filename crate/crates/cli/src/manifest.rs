//! Stage output directories and their run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{at, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// `<stage dir>/<file>` for inputs, the bare file name for outputs.
    pub name: String,
    pub sha256: String,
    pub format_version: u32,
}

/// Provenance of one stage run. Paths are recorded relative to their stage
/// directory so that reruns elsewhere produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn short_name(path: &Path) -> String {
    let file = path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}/{file}", dir.to_string_lossy()),
        None => file,
    }
}

/// Reads input files and remembers their digests.
#[derive(Debug, Default)]
pub struct Inputs {
    digests: Vec<FileDigest>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path, format_version: u32) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| at(path)(e.into()))?;
        self.digests.push(FileDigest { name: short_name(path), sha256: sha256_hex(&bytes), format_version });
        Ok(bytes)
    }
}

/// Writes the outputs of one stage and, last, its manifest.
#[derive(Debug)]
pub struct StageDir {
    dir: PathBuf,
    outputs: Vec<FileDigest>,
}

impl StageDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| at(dir)(e.into()))?;
        Ok(StageDir { dir: dir.to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn put(&mut self, name: &str, format_version: u32, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| at(&path)(e.into()))?;
        self.outputs.push(FileDigest { name: name.to_string(), sha256: sha256_hex(bytes), format_version });
        Ok(())
    }

    /// Serializes through `write` into memory, then to disk.
    pub fn put_with<F>(&mut self, name: &str, format_version: u32, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> metrocast::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf).map_err(at(&self.path(name)))?;
        self.put(name, format_version, &buf)
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, format_version: u32, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| at(&self.path(name))(e.into()))?;
        bytes.push(b'\n');
        self.put(name, format_version, &bytes)
    }

    pub fn finish<C: Serialize>(mut self, command: &str, seed: Option<u64>, config: &C, inputs: Inputs) -> Result<()> {
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).map_err(metrocast::Error::from)?,
            inputs: inputs.digests,
            outputs: std::mem::take(&mut self.outputs),
        };
        self.put_json(MANIFEST_FILE, MANIFEST_VERSION, &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_strings() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn short_names_keep_the_stage_dir() {
        assert_eq!(short_name(Path::new("/tmp/x/features/train.csv")), "features/train.csv");
        assert_eq!(short_name(Path::new("train.csv")), "train.csv");
    }
}
