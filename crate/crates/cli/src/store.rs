//! Run directory bookkeeping: versioned artifact writes and the manifest.
//!
//! A write never replaces a file with different contents. Rewriting
//! identical bytes is a no-op; different bytes go to the next free
//! `name.vN.ext`. Readers pick the highest version.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use unlearn_forge::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

fn versioned_name(rel: &Path, version: usize) -> PathBuf {
    if version <= 1 {
        return rel.to_path_buf();
    }
    let stem = rel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match rel.extension() {
        Some(ext) => format!("{stem}.v{version}.{}", ext.to_string_lossy()),
        None => format!("{stem}.v{version}"),
    };
    rel.with_file_name(name)
}

/// Highest existing version of `rel` under `root`.
pub fn latest(root: &Path, rel: impl AsRef<Path>) -> Option<PathBuf> {
    let rel = rel.as_ref();
    let mut found = None;
    for v in 1.. {
        let p = root.join(versioned_name(rel, v));
        if p.exists() {
            found = Some(p);
        } else {
            break;
        }
    }
    found
}

/// Like [`latest`], but a missing artifact is a not-found error.
pub fn require(root: &Path, rel: impl AsRef<Path>) -> Result<PathBuf> {
    let rel = rel.as_ref();
    latest(root, rel).ok_or_else(|| Error::NotFound(root.join(rel)))
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: PathBuf,
    pub command: String,
    pub written_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub command: String,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub commands: Vec<CommandEntry>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn load(root: &Path) -> Result<Option<Self>> {
        let p = root.join(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
    }
}

/// Writer for one command invocation.
pub struct Store {
    root: PathBuf,
    command: String,
    started_at: u64,
    written: Mutex<Vec<ArtifactEntry>>,
}

impl Store {
    pub fn open(root: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_owned(),
            started_at: now_secs(),
            written: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` or its next free version; returns the path
    /// actually holding the bytes.
    pub fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let rel = rel.as_ref();
        let mut version = 1;
        let target = loop {
            let candidate = versioned_name(rel, version);
            let full = self.root.join(&candidate);
            if !full.exists() {
                if let Some(dir) = full.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(&full, bytes)?;
                break candidate;
            }
            let newest = latest(&self.root, rel).as_deref() == Some(full.as_path());
            if newest && std::fs::read(&full)? == bytes {
                break candidate;
            }
            version += 1;
        };
        self.written.lock().expect("store lock").push(ArtifactEntry {
            path: target.clone(),
            command: self.command.clone(),
            written_at: now_secs(),
        });
        Ok(self.root.join(target))
    }

    pub fn write_str(&self, rel: impl AsRef<Path>, text: &str) -> Result<PathBuf> {
        self.write(rel, text.as_bytes())
    }

    /// Merges this invocation's artifacts into the manifest. Each path is
    /// listed once; a rewrite refreshes its entry.
    pub fn finish(self, master_seed: u64, trial_seeds: Vec<u64>, config: serde_json::Value) -> Result<RunManifest> {
        let mut manifest = RunManifest::load(&self.root)?.unwrap_or(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            master_seed,
            trial_seeds: trial_seeds.clone(),
            config: config.clone(),
            commands: Vec::new(),
            artifacts: Vec::new(),
        });
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_owned();
        manifest.master_seed = master_seed;
        manifest.trial_seeds = trial_seeds;
        manifest.config = config;
        let mut written = self.written.into_inner().expect("store lock");
        written.sort_by(|a, b| a.path.cmp(&b.path));
        for w in written {
            match manifest.artifacts.iter_mut().find(|a| a.path == w.path) {
                Some(slot) => *slot = w,
                None => manifest.artifacts.push(w),
            }
        }
        manifest.commands.push(CommandEntry {
            command: self.command,
            started_at: self.started_at,
            finished_at: now_secs(),
        });
        std::fs::write(
            self.root.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrites_are_versioned() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), "t").unwrap();
        let a = s.write_str("x/eval.csv", "1").unwrap();
        assert_eq!(s.write_str("x/eval.csv", "1").unwrap(), a);
        let b = s.write_str("x/eval.csv", "2").unwrap();
        assert!(b.ends_with("x/eval.v2.csv"));
        assert_eq!(latest(dir.path(), "x/eval.csv").unwrap(), b);
        let c = s.write_str("x/eval.csv", "1").unwrap();
        assert!(c.ends_with("x/eval.v3.csv"));
        assert_eq!(std::fs::read_to_string(&a).unwrap(), "1");
        let m = s.finish(0, vec![], serde_json::Value::Null).unwrap();
        assert_eq!(m.artifacts.len(), 3);
        assert!(require(dir.path(), "missing.csv").is_err());
    }
}
