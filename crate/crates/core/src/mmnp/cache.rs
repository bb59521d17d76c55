//! Append-only JSON Lines cache of pipeline results keyed by
//! `(sample_id, k)`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub sample_id: String,
    /// Rollout step; 0 for offline narration.
    pub k: usize,
    pub narrative: String,
    pub describer_outputs: Vec<String>,
    pub evaluator_log: Vec<String>,
    pub rounds_used: usize,
    pub passed: bool,
    pub fallback: bool,
    pub pipeline_version: String,
    pub content_hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    sample_id: &'a str,
    k: usize,
    narrative: &'a str,
    describer_outputs: &'a [String],
    evaluator_log: &'a [String],
    rounds_used: usize,
    passed: bool,
    fallback: bool,
    pipeline_version: &'a str,
}

impl CacheRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sample_id: &str,
        k: usize,
        narrative: String,
        describer_outputs: Vec<String>,
        evaluator_log: Vec<String>,
        rounds_used: usize,
        passed: bool,
        fallback: bool,
        pipeline_version: &str,
    ) -> Self {
        let mut r = Self {
            sample_id: sample_id.to_string(),
            k,
            narrative,
            describer_outputs,
            evaluator_log,
            rounds_used,
            passed,
            fallback,
            pipeline_version: pipeline_version.to_string(),
            content_hash: String::new(),
        };
        r.content_hash = r.compute_hash();
        r
    }

    pub fn compute_hash(&self) -> String {
        let view = Hashed {
            sample_id: &self.sample_id,
            k: self.k,
            narrative: &self.narrative,
            describer_outputs: &self.describer_outputs,
            evaluator_log: &self.evaluator_log,
            rounds_used: self.rounds_used,
            passed: self.passed,
            fallback: self.fallback,
            pipeline_version: &self.pipeline_version,
        };
        let bytes = serde_json::to_vec(&view).expect("record serialises");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn verify(&self) -> Result<()> {
        if self.compute_hash() != self.content_hash {
            return Err(Error::Corruption(format!(
                "content hash mismatch for ({}, {})",
                self.sample_id, self.k
            )));
        }
        Ok(())
    }
}

/// In-memory view of a cache file; writes go straight to disk.
#[derive(Debug)]
pub struct NarrationCache {
    path: PathBuf,
    records: HashMap<(String, usize), CacheRecord>,
}

impl NarrationCache {
    /// Opens or creates the cache file. Hashes are checked on lookup.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = HashMap::new();
        if path.exists() {
            for (n, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: CacheRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Corruption(format!("line {}: {e}", n + 1)))?;
                records.insert((r.sample_id.clone(), r.k), r);
            }
        }
        Ok(Self { path, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, sample_id: &str, k: usize) -> bool {
        self.records.contains_key(&(sample_id.to_string(), k))
    }

    pub fn get(&self, sample_id: &str, k: usize) -> Result<&CacheRecord> {
        let r = self
            .records
            .get(&(sample_id.to_string(), k))
            .ok_or_else(|| Error::NotFound(format!("no cached narrative for ({sample_id}, {k})")))?;
        r.verify()?;
        Ok(r)
    }

    /// Appends `record`. Returns `false` if an identical record is already
    /// stored; a different record under the same key is an error.
    pub fn put(&mut self, record: CacheRecord) -> Result<bool> {
        record.verify()?;
        let key = (record.sample_id.clone(), record.k);
        if let Some(existing) = self.records.get(&key) {
            if existing.content_hash == record.content_hash {
                return Ok(false);
            }
            return Err(Error::Contract(format!(
                "cache already holds a different record for ({}, {})",
                key.0, key.1
            )));
        }
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?
            .write_all(line.as_bytes())?;
        self.records.insert(key, record);
        Ok(true)
    }

    pub fn records(&self) -> impl Iterator<Item = &CacheRecord> {
        self.records.values()
    }
}

pub fn cache_put(path: impl AsRef<Path>, record: CacheRecord) -> Result<bool> {
    NarrationCache::open(path)?.put(record)
}

pub fn cache_get(path: impl AsRef<Path>, sample_id: &str, k: usize) -> Result<CacheRecord> {
    NarrationCache::open(path)?.get(sample_id, k).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, text: &str) -> CacheRecord {
        CacheRecord::new(
            id,
            0,
            text.into(),
            vec!["z: weak maximum +0.1 near north".into()],
            vec!["round 0: PASS score 1.00".into()],
            0,
            true,
            false,
            "mmnp-1/full/r2",
        )
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let r = record("a", "z: weak maximum +0.1 near north");
        assert!(cache_put(&p, r.clone()).unwrap());
        assert!(!cache_put(&p, r.clone()).unwrap());
        assert_eq!(cache_get(&p, "a", 0).unwrap(), r);
        assert!(matches!(cache_get(&p, "b", 0), Err(Error::NotFound(_))));
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert!(cache_put(&p, record("a", "other text")).is_err());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        cache_put(&p, record("a", "z: weak maximum +0.1 near north")).unwrap();
        let body = fs::read_to_string(&p).unwrap().replace("+0.1 near north\"", "+0.9 near north\"");
        fs::write(&p, body).unwrap();
        assert!(matches!(cache_get(&p, "a", 0), Err(Error::Corruption(_))));
    }
}
