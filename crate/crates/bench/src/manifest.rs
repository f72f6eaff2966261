//! Run manifests: resolved config, seeds and a content hash for every
//! artifact in the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    /// SHA-256 over `blob <len>\0<content>`, as git computes object ids.
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub path: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// The verb that produced the directory, e.g. `train` or `bench bell`.
    pub command: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub corpus: Option<CorpusRef>,
    pub files: Vec<FileEntry>,
}

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.strip_prefix(root).map(|r| r != Path::new(MANIFEST_NAME)).unwrap_or(true) {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `root` except the manifest itself, sorted by
/// relative path with `/` separators.
pub fn hash_tree(root: &Path) -> std::io::Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    walk(root, root, &mut paths)?;
    let mut files = paths
        .into_iter()
        .map(|p| {
            let content = std::fs::read(&p)?;
            let rel = p.strip_prefix(root).unwrap_or(&p);
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(FileEntry { path: rel, bytes: content.len() as u64, blob_sha256: blob_hash(&content) })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

impl Manifest {
    pub fn new(command: &str, config: String, seeds: Vec<u64>, corpus: Option<CorpusRef>) -> Self {
        Manifest {
            tool: "qsynth".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            corpus,
            files: Vec::new(),
        }
    }

    /// Fills `files` from the current contents of `root` and writes the
    /// manifest there.
    pub fn write(mut self, root: &Path) -> std::io::Result<Manifest> {
        self.files = hash_tree(root)?;
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(root.join(MANIFEST_NAME), text + "\n")?;
        Ok(self)
    }

    pub fn read(path: &Path) -> std::io::Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Paths whose content no longer matches, or that are missing.
    pub fn verify(&self, root: &Path) -> std::io::Result<Vec<String>> {
        let now = hash_tree(root)?;
        let mut bad: Vec<String> = self
            .files
            .iter()
            .filter(|f| !now.contains(f))
            .map(|f| f.path.clone())
            .collect();
        bad.extend(now.iter().filter(|f| !self.files.iter().any(|g| g.path == f.path)).map(|f| f.path.clone()));
        Ok(bad)
    }
}
