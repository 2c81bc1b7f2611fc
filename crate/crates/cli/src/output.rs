//! Output directory with a manifest of everything written to it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: &'a str,
    files: &'a [ManifestEntry],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Artifacts {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `contents` to `name` (relative, `/`-separated) and records it.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry { path: name.to_string(), bytes: contents.len(), sha256: sha256_hex(contents) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Records files another writer put under this root.
    pub fn adopt(&mut self, prefix: &str, entries: &[ManifestEntry]) {
        for e in entries {
            self.entries.push(ManifestEntry { path: format!("{prefix}/{}", e.path), ..e.clone() });
        }
    }

    /// Records a file that already exists under this root.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let contents = fs::read(self.root.join(name)).with_context(|| format!("reading {name}"))?;
        self.entries.push(ManifestEntry { path: name.to_string(), bytes: contents.len(), sha256: sha256_hex(&contents) });
        Ok(())
    }

    /// Writes the manifest (which does not list itself) and returns the
    /// entries it lists.
    pub fn finish(mut self, config_sha256: &str) -> Result<Vec<ManifestEntry>> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256,
            files: &self.entries,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(self.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        a.write("b.csv", b"x\n").unwrap();
        a.write("sub/a.csv", b"y\n").unwrap();
        a.write("b.csv", b"z\n").unwrap();
        let entries = a.finish("abc").unwrap();
        assert_eq!(entries.iter().map(|e| e.path.as_str()).collect::<Vec<_>>(), ["b.csv", "sub/a.csv"]);
        assert_eq!(entries[0].sha256, sha256_hex(b"z\n"));
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("\"config_sha256\": \"abc\""));
    }
}
