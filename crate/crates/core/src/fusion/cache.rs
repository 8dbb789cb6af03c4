use serde::{Deserialize, Serialize};

use super::rrf::FusedHit;
use crate::util::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    Fixed,
    Adaptive,
}

impl std::str::FromStr for AlphaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "adaptive" => Ok(AlphaMode::Adaptive),
            other => Err(format!("unknown alpha mode {other:?} (fixed|adaptive)")),
        }
    }
}

/// Parameters that must match for a cached result to be reusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub k: usize,
    pub alpha_mode: AlphaMode,
}

#[derive(Debug, Clone)]
struct Entry {
    vector: Vec<f32>,
    key: CacheKey,
    results: Vec<FusedHit>,
    last_hit: u64,
}

/// Query-vector cache: a lookup hits when some stored vector has cosine
/// ≥ `threshold` with the query. Full caches evict the least recently hit
/// entry (insertion counts as a hit).
#[derive(Debug, Clone)]
pub struct SemanticCache {
    capacity: usize,
    threshold: f32,
    entries: Vec<Entry>,
    clock: u64,
    hits: u64,
    misses: u64,
}

impl Default for SemanticCache {
    fn default() -> Self {
        SemanticCache::new(500, 0.92)
    }
}

impl SemanticCache {
    pub fn new(capacity: usize, threshold: f32) -> Self {
        SemanticCache {
            capacity,
            threshold,
            entries: Vec::new(),
            clock: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Query vectors are expected to be unit length.
    pub fn lookup(&mut self, query: &[f32], key: CacheKey) -> Option<Vec<FusedHit>> {
        self.clock += 1;
        let best = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key == key && e.vector.len() == query.len())
            .map(|(i, e)| (i, dot(query, &e.vector)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((i, sim)) if sim >= self.threshold => {
                self.hits += 1;
                self.entries[i].last_hit = self.clock;
                Some(self.entries[i].results.clone())
            }
            _ => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, query: &[f32], key: CacheKey, results: Vec<FusedHit>) {
        if self.capacity == 0 {
            return;
        }
        self.clock += 1;
        if self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_hit)
                .map(|(i, _)| i)
                .expect("non-empty");
            self.entries.swap_remove(victim);
        }
        self.entries.push(Entry {
            vector: query.to_vec(),
            key,
            results,
            last_hit: self.clock,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize, d: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    const KEY: CacheKey = CacheKey {
        k: 10,
        alpha_mode: AlphaMode::Fixed,
    };

    #[test]
    fn repeat_hits_orthogonal_misses() {
        let mut c = SemanticCache::default();
        c.insert(&unit(0, 4), KEY, vec![]);
        assert!(c.lookup(&unit(0, 4), KEY).is_some());
        assert!(c.lookup(&unit(1, 4), KEY).is_none());
        let other = CacheKey { k: 5, ..KEY };
        assert!(c.lookup(&unit(0, 4), other).is_none());
    }

    #[test]
    fn threshold_is_inclusive_and_respected() {
        let mut c = SemanticCache::default();
        c.insert(&[1.0, 0.0], KEY, vec![]);
        let below = [0.91f32, (1.0f32 - 0.91 * 0.91).sqrt()];
        assert!(c.lookup(&below, KEY).is_none());
        let above = [0.93f32, (1.0f32 - 0.93 * 0.93).sqrt()];
        assert!(c.lookup(&above, KEY).is_some());
    }

    #[test]
    fn evicts_least_recently_hit() {
        let d = 501;
        let mut c = SemanticCache::default();
        for i in 0..500 {
            c.insert(&unit(i, d), KEY, vec![]);
        }
        // Touch everything but entry 7, so 7 is the least recently hit.
        for i in 0..500 {
            if i != 7 {
                assert!(c.lookup(&unit(i, d), KEY).is_some());
            }
        }
        c.insert(&unit(500, d), KEY, vec![]);
        assert_eq!(c.len(), 500);
        assert!(c.lookup(&unit(7, d), KEY).is_none());
        assert!(c.lookup(&unit(0, d), KEY).is_some());
        assert!(c.lookup(&unit(500, d), KEY).is_some());
    }
}
