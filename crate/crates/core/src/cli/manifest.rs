//! Run manifests and timing sidecars.
//!
//! `manifest.json` lists the configuration digest, seed, artifact version,
//! and the SHA-256 of every input read and output written. It holds no
//! clock or host data, so identical reruns give identical manifests.
//! `timing.json` carries the wall-clock time and host description.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FORMAT: &str = "caliper-manifest v1";
pub const TIMING_FORMAT: &str = "caliper-timing v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub command: String,
    pub artifact_version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub overrides: Overrides,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HostInfo {
    pub hostname: String,
    pub os: &'static str,
    pub arch: &'static str,
    pub cpus: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        let hostname = std::fs::read_to_string("/etc/hostname")
            .map(|s| s.trim().to_string())
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| std::env::var("HOSTNAME").ok())
            .unwrap_or_else(|| "unknown".into());
        Self {
            hostname,
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub format: &'static str,
    pub command: String,
    pub wall_seconds: f64,
    pub host: HostInfo,
}

/// Files written into one output directory, in write order.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents.as_ref())?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(contents.as_ref()),
        });
        Ok(())
    }

    /// Records a file that something else wrote into the directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(name))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn files(&self) -> &[FileDigest] {
        &self.files
    }
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn outputs_track_rewrites_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(dir.path().join("run")).unwrap();
        out.write("a.txt", "1").unwrap();
        out.write("sub/b.txt", "2").unwrap();
        out.write("a.txt", "3").unwrap();
        let names: Vec<&str> = out.files().iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["sub/b.txt", "a.txt"]);
        assert_eq!(out.files()[1].sha256, sha256_hex(b"3"));
    }
}
