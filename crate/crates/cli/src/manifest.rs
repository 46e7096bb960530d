//! Top-level results index: every produced artifact with its SHA-256.
//!
//! Only the orchestrating thread writes the manifest. Writes go to a
//! temporary file that is renamed over the old one, and a lock file keeps a
//! second process from interleaving updates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = "manifest.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Config,
    Checkpoint,
    Csv,
    Json,
    Plot,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the results root, `/`-separated.
    pub path: String,
    pub kind: ArtifactKind,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub entries: Vec<Artifact>,
}

/// Outcome of checking one manifest entry against the file system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    Ok,
    Missing,
    Mismatch { expected: String, actual: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers never see a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

impl ResultsIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(ResultsIndex::default());
        }
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let index: ResultsIndex =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &index.entries {
            if !seen.insert(e.path.as_str()) {
                bail!("{}: duplicate entry for {}", path.display(), e.path);
            }
        }
        Ok(index)
    }

    pub fn get(&self, rel: &str) -> Option<&Artifact> {
        self.entries.iter().find(|e| e.path == rel)
    }

    /// Records an artifact. Entries are never dropped; rewriting a path
    /// updates its hash in place and keeps its position.
    pub fn record(&mut self, rel: &str, kind: ArtifactKind, bytes: &[u8]) {
        let entry = Artifact {
            path: rel.to_string(),
            kind,
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        };
        match self.entries.iter_mut().find(|e| e.path == rel) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn check(&self, root: &Path) -> Vec<(String, Check)> {
        self.entries
            .iter()
            .map(|e| {
                let status = match fs::read(root.join(&e.path)) {
                    Err(_) => Check::Missing,
                    Ok(bytes) => {
                        let actual = sha256_hex(&bytes);
                        if actual == e.sha256 {
                            Check::Ok
                        } else {
                            Check::Mismatch {
                                expected: e.sha256.clone(),
                                actual,
                            }
                        }
                    }
                };
                (e.path.clone(), status)
            })
            .collect()
    }
}

/// Exclusive right to update the manifest under `root`; released on drop.
pub struct ManifestLock {
    path: PathBuf,
}

impl ManifestLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(ManifestLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "{} exists: another run is writing these results (remove it if stale)",
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for ManifestLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects artifacts for one command and writes them under the results root.
pub struct Store {
    pub root: PathBuf,
    pub index: ResultsIndex,
    _lock: ManifestLock,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self> {
        let lock = ManifestLock::acquire(root)?;
        let index = ResultsIndex::load(root)?;
        Ok(Store {
            root: root.to_path_buf(),
            index,
            _lock: lock,
        })
    }

    /// Writes one artifact and records it. The manifest itself is saved
    /// after every artifact so an interrupted run still indexes what it made.
    pub fn put(&mut self, rel: &str, kind: ArtifactKind, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.index.record(rel, kind, bytes);
        self.index.save(&self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            store
                .put("x/a.csv", ArtifactKind::Csv, b"a,b\n1,2\n")
                .unwrap();
            store.put("x/b.json", ArtifactKind::Json, b"{}").unwrap();
            store
                .put("x/a.csv", ArtifactKind::Csv, b"a,b\n3,4\n")
                .unwrap();
        }
        let index = ResultsIndex::load(dir.path()).unwrap();
        assert_eq!(index.entries.len(), 2);
        assert_eq!(index.entries[0].path, "x/a.csv");
        assert!(index.check(dir.path()).iter().all(|(_, c)| *c == Check::Ok));

        fs::write(dir.path().join("x/a.csv"), "tampered").unwrap();
        fs::remove_file(dir.path().join("x/b.json")).unwrap();
        let checks = index.check(dir.path());
        assert!(matches!(checks[0].1, Check::Mismatch { .. }));
        assert_eq!(checks[1].1, Check::Missing);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let first = ManifestLock::acquire(dir.path()).unwrap();
        assert!(ManifestLock::acquire(dir.path()).is_err());
        drop(first);
        ManifestLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep/f.txt");
        write_atomic(&p, b"hello").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hello");
        assert!(!dir.path().join("deep/f.txt.tmp").exists());
    }
}
