//! Frozen text teachers for distillation, plus an embedding cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeEncoder;
use crate::ontology::normalize_keyword;

/// A frozen model that maps texts to unit-norm embedding rows.
pub trait TeacherHandle {
    fn output_dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Array2<f64>>;
}

impl TeacherHandle for KnowledgeEncoder {
    fn output_dim(&self) -> usize {
        KnowledgeEncoder::output_dim(self)
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        Ok(KnowledgeEncoder::embed(self, texts))
    }
}

/// Deterministic stand-in teacher: texts mentioning the same keyword land
/// near a shared unit anchor, texts mentioning none get hash-only noise.
/// Gives tests a teacher with perfect class structure and no training cost.
pub struct MockTeacher {
    anchors: Vec<(String, Vec<f64>)>,
    dim: usize,
    noise: f64,
}

impl MockTeacher {
    /// `keywords` are matched as substrings of the normalized text; earlier
    /// entries win when several match.
    pub fn new(keywords: &[String], dim: usize, seed: u64, noise: f64) -> Self {
        assert!(dim >= 2, "teacher dim too small");
        let anchors = keywords
            .iter()
            .enumerate()
            .map(|(i, kw)| {
                let v = Self::unit_from_hash(dim, seed ^ fnv(kw.as_bytes()) ^ (i as u64) << 32);
                (normalize_keyword(kw), v)
            })
            .collect();
        MockTeacher { anchors, dim, noise }
    }

    fn unit_from_hash(dim: usize, mut state: u64) -> Vec<f64> {
        // SplitMix-style expansion into a pseudo-Gaussian unit vector.
        let mut v: Vec<f64> = (0..dim)
            .map(|_| {
                state = state.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^= z >> 31;
                // Sum of two uniforms, centered: light-tailed but symmetric.
                let u1 = (z >> 11) as f64 / (1u64 << 53) as f64;
                let u2 = (z & 0x3ffffff) as f64 / (1u64 << 26) as f64;
                u1 + u2 - 1.0
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl TeacherHandle for MockTeacher {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((texts.len(), self.dim));
        for (i, text) in texts.iter().enumerate() {
            let normalized = normalize_keyword(text);
            let anchor = self
                .anchors
                .iter()
                .find(|(kw, _)| normalized.contains(kw.as_str()))
                .map(|(_, v)| v.clone());
            let jitter = Self::unit_from_hash(self.dim, fnv(normalized.as_bytes()));
            let mut row: Vec<f64> = match anchor {
                Some(a) => a
                    .iter()
                    .zip(jitter.iter())
                    .map(|(av, jv)| av + self.noise * jv)
                    .collect(),
                None => jitter,
            };
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= norm);
            for (j, v) in row.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

/// Write-through cache around a teacher, keyed by the SHA-256 of the text.
/// Optionally persists to a JSONL file (one `{"sha256", "embedding"}` object
/// per line) that is replayed on construction.
pub struct TeacherCache<'a> {
    inner: &'a dyn TeacherHandle,
    entries: Mutex<BTreeMap<String, Vec<f64>>>,
    file: Option<PathBuf>,
}

impl<'a> TeacherCache<'a> {
    pub fn new(inner: &'a dyn TeacherHandle, file: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if let Some(path) = file {
            if path.exists() {
                let reader = BufReader::new(fs::File::open(path)?);
                for (lineno, line) in reader.lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
                        Error::Parse(format!("teacher cache line {}: {e}", lineno + 1))
                    })?;
                    let key = row
                        .get("sha256")
                        .and_then(|v| v.as_str())
                        .ok_or_else(|| Error::Parse("cache entry missing sha256".into()))?;
                    let emb: Vec<f64> = row
                        .get("embedding")
                        .and_then(|v| v.as_array())
                        .ok_or_else(|| Error::Parse("cache entry missing embedding".into()))?
                        .iter()
                        .map(|x| x.as_f64().unwrap_or(f64::NAN))
                        .collect();
                    if emb.len() != inner.output_dim() || emb.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Parse(format!(
                            "cache entry {key} has bad embedding"
                        )));
                    }
                    entries.insert(key.to_string(), emb);
                }
            }
        }
        Ok(TeacherCache {
            inner,
            entries: Mutex::new(entries),
            file: file.map(Path::to_path_buf),
        })
    }

    pub fn cached_len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    fn key(text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

impl TeacherHandle for TeacherCache<'_> {
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        let dim = self.inner.output_dim();
        let keys: Vec<String> = texts.iter().map(|t| Self::key(t)).collect();
        // One representative index per distinct missing key, so a text that
        // repeats within the batch is embedded once.
        let misses: Vec<usize> = {
            let entries = self.entries.lock().unwrap();
            let mut seen = BTreeMap::new();
            (0..texts.len())
                .filter(|&i| {
                    !entries.contains_key(&keys[i])
                        && seen.insert(keys[i].clone(), ()).is_none()
                })
                .collect()
        };
        if !misses.is_empty() {
            let miss_texts: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&miss_texts)?;
            let mut entries = self.entries.lock().unwrap();
            let mut appended = String::new();
            for (row, &i) in misses.iter().enumerate() {
                let emb: Vec<f64> = fresh.row(row).iter().copied().collect();
                if entries.insert(keys[i].clone(), emb.clone()).is_none() && self.file.is_some() {
                    let obj = serde_json::json!({ "sha256": keys[i], "embedding": emb });
                    appended.push_str(&serde_json::to_string(&obj)?);
                    appended.push('\n');
                }
            }
            if let Some(path) = &self.file {
                if !appended.is_empty() {
                    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
                    f.write_all(appended.as_bytes())?;
                }
            }
        }
        let entries = self.entries.lock().unwrap();
        let mut out = Array2::zeros((texts.len(), dim));
        for (i, key) in keys.iter().enumerate() {
            for (j, v) in entries[key].iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use tempfile::tempdir;

    use super::*;

    #[test]
    fn mock_teacher_clusters_by_keyword() {
        let kws = vec!["arachnodactyly".to_string(), "brachydactyly".to_string()];
        let teacher = MockTeacher::new(&kws, 16, 9, 0.05);
        let texts = vec![
            "Panel shows arachnodactyly of both hands".to_string(),
            "Severe Arachnodactyly in a child".to_string(),
            "Image with brachydactyly type A".to_string(),
        ];
        let z = teacher.embed(&texts).unwrap();
        let cos = |a: usize, b: usize| z.row(a).dot(&z.row(b));
        assert!(cos(0, 1) > 0.9, "same keyword should cluster: {}", cos(0, 1));
        assert!(cos(0, 2) < 0.5, "different keywords should separate: {}", cos(0, 2));
        for row in z.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        // Deterministic.
        assert_eq!(z, teacher.embed(&texts).unwrap());
    }

    struct CountingTeacher {
        calls: Cell<usize>,
    }

    impl TeacherHandle for CountingTeacher {
        fn output_dim(&self) -> usize {
            3
        }
        fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
            self.calls.set(self.calls.get() + texts.len());
            let mut out = Array2::zeros((texts.len(), 3));
            for (i, t) in texts.iter().enumerate() {
                let h = fnv(t.as_bytes());
                let mut row = [
                    1.0 + (h & 0xff) as f64,
                    1.0 + ((h >> 8) & 0xff) as f64,
                    1.0 + ((h >> 16) & 0xff) as f64,
                ];
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
                out.row_mut(i).assign(&ndarray::arr1(&row));
            }
            Ok(out)
        }
    }

    #[test]
    fn cache_avoids_recomputation_and_persists() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("teacher_cache.jsonl");
        let counting = CountingTeacher { calls: Cell::new(0) };
        let texts = vec!["alpha".to_string(), "beta".to_string(), "alpha".to_string()];

        let cache = TeacherCache::new(&counting, Some(&path)).unwrap();
        let first = cache.embed(&texts).unwrap();
        assert_eq!(counting.calls.get(), 2, "duplicate text must hit the cache");
        let again = cache.embed(&texts).unwrap();
        assert_eq!(first, again);
        assert_eq!(counting.calls.get(), 2);
        drop(cache);

        // A fresh cache replays the file and never calls the teacher.
        let counting2 = CountingTeacher { calls: Cell::new(0) };
        let cache2 = TeacherCache::new(&counting2, Some(&path)).unwrap();
        assert_eq!(cache2.cached_len(), 2);
        let replayed = cache2.embed(&texts).unwrap();
        assert_eq!(first, replayed);
        assert_eq!(counting2.calls.get(), 0);
    }
}
