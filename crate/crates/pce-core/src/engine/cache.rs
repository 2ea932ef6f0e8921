//! Content-addressed cache for masked-prompt evaluations.
//!
//! One evaluation — generate `num_samples` completions for a masked prompt
//! and aggregate the classifier outputs — is the expensive unit of work in
//! a run. The key pins everything that determines the result, so a hit is
//! guaranteed to return the identical aggregate the original evaluation
//! produced.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub masked_text_sha256: String,
    pub num_samples: usize,
    pub seed_base: u64,
    pub generator_identity: String,
    pub classifier_identity: String,
    pub aggregate_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedEvaluation {
    pub aggregate: f64,
    /// Digest over the sample texts, for audit.
    pub sample_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Thread-safe evaluation cache. Concurrent writers racing on the same key
/// write identical values by construction, so last-write-wins is sound.
#[derive(Debug, Default)]
pub struct EvaluationCache {
    map: Mutex<BTreeMap<CacheKey, CachedEvaluation>>,
}

impl EvaluationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedEvaluation> {
        self.map.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, value: CachedEvaluation) {
        self.map.lock().unwrap().insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.lock().unwrap().is_empty()
    }

    /// Serializes the full cache contents for on-disk persistence.
    pub fn to_json(&self) -> String {
        let map = self.map.lock().unwrap();
        let entries: Vec<(&CacheKey, &CachedEvaluation)> = map.iter().collect();
        serde_json::to_string(&entries).expect("cache entries serialize")
    }

    pub fn from_json(body: &str) -> Result<Self, serde_json::Error> {
        let entries: Vec<(CacheKey, CachedEvaluation)> = serde_json::from_str(body)?;
        Ok(Self {
            map: Mutex::new(entries.into_iter().collect()),
        })
    }
}
