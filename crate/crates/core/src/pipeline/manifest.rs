//! Stage manifest: recorded input and output hashes. A stage whose inputs
//! and outputs all hash to their recorded values is skipped on re-run, so
//! a finished workspace re-runs as a fast no-op and any tampered artifact
//! is rebuilt.
//!
//! The manifest holds only content hashes, never execution status, so two
//! runs over identical inputs write byte-identical manifests regardless of
//! which stages actually executed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .map_err(|e| Error::Lookup(format!("hash {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Logical input key (source file, upstream stage digest, or config
    /// fingerprint) to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory, to sha256.
    pub outputs: BTreeMap<String, String>,
}

impl StageRecord {
    /// One hash standing for everything this stage produced; downstream
    /// stages list it as an input.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.outputs).expect("BTreeMap serializes");
        sha256_hex(text.as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// `Ok(None)` when no manifest exists yet; a corrupt one is an error
    /// (delete it to force a fresh run).
    pub fn read_from(path: &Path) -> Result<Option<Manifest>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        let m = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("manifest {}: {e}", path.display())))?;
        Ok(Some(m))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// What the orchestrator did with each stage. Reported to the caller, never
/// persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Executed,
    Skipped,
}

impl std::fmt::Display for StageStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageStatus::Executed => "executed",
            StageStatus::Skipped => "skipped",
        })
    }
}

/// Hash files under `root`, keyed by the given root-relative paths.
pub fn hash_outputs(root: &Path, rel_paths: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for rel in rel_paths {
        let digest = sha256_file(&root.join(rel))?;
        if out.insert(rel.clone(), digest).is_some() {
            return Err(Error::Invariant(format!("output {rel} listed twice")));
        }
    }
    Ok(out)
}

/// True when every recorded output still exists with its recorded hash.
pub fn outputs_unchanged(root: &Path, outputs: &BTreeMap<String, String>) -> bool {
    outputs.iter().all(|(rel, recorded)| {
        matches!(sha256_file(&root.join(rel)), Ok(h) if &h == recorded)
    })
}

/// Every file under `dir` as a sorted list of `root`-relative paths.
pub fn files_under(root: &Path, dir: &Path) -> Result<Vec<String>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).map_err(|_| {
                    Error::Invariant(format!("{} escapes {}", path.display(), root.display()))
                })?;
                found.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    found.sort();
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        // Reference digest of the empty string and of "abc".
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), sha256_hex(b"abc"));
        assert!(sha256_file(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn manifest_round_trip_and_absence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        assert_eq!(Manifest::read_from(&path).unwrap(), None);

        let m = Manifest {
            stages: vec![StageRecord {
                name: "build-kg".into(),
                inputs: BTreeMap::from([("ontology.obo".to_string(), "00".to_string())]),
                outputs: BTreeMap::from([("kg/graph.jsonl".to_string(), "11".to_string())]),
            }],
        };
        m.write_to(&path).unwrap();
        assert_eq!(Manifest::read_from(&path).unwrap(), Some(m.clone()));
        m.write_to(&path).unwrap();
        let a = fs::read(&path).unwrap();
        m.write_to(&path).unwrap();
        assert_eq!(a, fs::read(&path).unwrap(), "rewrites are byte-identical");

        fs::write(&path, "{not json").unwrap();
        assert!(Manifest::read_from(&path).is_err());
    }

    #[test]
    fn output_verification_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a"), "one").unwrap();
        fs::write(dir.path().join("sub/b"), "two").unwrap();

        let listed = files_under(dir.path(), dir.path()).unwrap();
        assert_eq!(listed, vec!["a".to_string(), "sub/b".to_string()]);

        let outputs = hash_outputs(dir.path(), &listed).unwrap();
        assert!(outputs_unchanged(dir.path(), &outputs));

        fs::write(dir.path().join("sub/b"), "TWO").unwrap();
        assert!(!outputs_unchanged(dir.path(), &outputs));
        fs::remove_file(dir.path().join("a")).unwrap();
        assert!(!outputs_unchanged(dir.path(), &outputs));
    }

    #[test]
    fn stage_digest_tracks_outputs_only() {
        let rec = |inputs: &str, out_hash: &str| StageRecord {
            name: "curate".into(),
            inputs: BTreeMap::from([("x".to_string(), inputs.to_string())]),
            outputs: BTreeMap::from([("corpus/pairs.jsonl".to_string(), out_hash.to_string())]),
        };
        assert_eq!(rec("aa", "cc").digest(), rec("bb", "cc").digest());
        assert_ne!(rec("aa", "cc").digest(), rec("aa", "dd").digest());
    }
}
