use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{DenseHit, DenseSearcher};
use crate::error::{Error, Result};
use crate::util::{dot, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotGraphConfig {
    pub max_vectors: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub migration_batch: usize,
    pub seed: u64,
}

impl Default for HotGraphConfig {
    fn default() -> Self {
        HotGraphConfig {
            max_vectors: 500_000,
            m: 16,
            ef_construction: 200,
            ef_search: 40,
            migration_batch: 100_000,
            seed: 42,
        }
    }
}

impl HotGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("M must be at least 2, got {}", self.m)));
        }
        if self.max_vectors == 0 || self.migration_batch == 0 {
            return Err(Error::InvalidConfig("max_vectors and migration_batch must be positive".into()));
        }
        if self.ef_search == 0 || self.ef_construction == 0 {
            return Err(Error::InvalidConfig("ef values must be positive".into()));
        }
        Ok(())
    }
}

/// Oldest hot ids due for migration, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationRequest {
    pub ids: Vec<u32>,
}

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    sim: f32,
    slot: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then(other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Hierarchical navigable small-world graph over unit vectors with
/// tombstone deletion.
#[derive(Debug, Clone)]
pub struct HotGraph {
    cfg: HotGraphConfig,
    d: usize,
    vectors: Vec<f32>,
    ids: Vec<u32>,
    links: Vec<Vec<Vec<u32>>>,
    deleted: Vec<bool>,
    tombstones: usize,
    slot_of: HashMap<u32, u32>,
    order: VecDeque<u32>,
    entry: Option<u32>,
    max_level: usize,
    rng: ChaCha8Rng,
    rebuilds: u64,
}

impl HotGraph {
    pub fn new(d: usize, cfg: HotGraphConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HotGraph {
            cfg,
            d,
            vectors: Vec::new(),
            ids: Vec::new(),
            links: Vec::new(),
            deleted: Vec::new(),
            tombstones: 0,
            slot_of: HashMap::new(),
            order: VecDeque::new(),
            entry: None,
            max_level: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            rebuilds: 0,
        })
    }

    pub fn config(&self) -> &HotGraphConfig {
        &self.cfg
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.cfg.ef_search = ef.max(1);
    }

    pub fn contains(&self, id: u32) -> bool {
        self.slot_of.contains_key(&id)
    }

    /// Live ids, oldest first.
    pub fn ids_in_order(&self) -> impl Iterator<Item = u32> + '_ {
        self.order.iter().copied()
    }

    pub fn tombstones(&self) -> usize {
        self.tombstones
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> u64 {
        let links: usize = self.links.iter().flatten().map(|l| l.capacity() * 4 + 24).sum();
        (self.vectors.capacity() * 4 + self.ids.capacity() * 4 + links + self.slot_of.len() * 16 + self.order.len() * 4)
            as u64
    }

    pub fn vector(&self, id: u32) -> Option<&[f32]> {
        self.slot_of.get(&id).map(|&s| self.vec_at(s))
    }

    #[inline]
    fn vec_at(&self, slot: u32) -> &[f32] {
        let s = slot as usize * self.d;
        &self.vectors[s..s + self.d]
    }

    #[inline]
    fn sim(&self, q: &[f32], slot: u32) -> f32 {
        dot(q, self.vec_at(slot))
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.cfg.m
        } else {
            self.cfg.m
        }
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / (self.cfg.m as f64).ln();
        let u: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        ((-u.ln() * ml).floor() as usize).min(32)
    }

    fn greedy(&self, q: &[f32], mut cur: u32, level: usize) -> u32 {
        let mut best = self.sim(q, cur);
        loop {
            let mut changed = false;
            for &n in &self.links[cur as usize][level] {
                let s = self.sim(q, n);
                if s > best || (s == best && n < cur) {
                    best = s;
                    cur = n;
                    changed = true;
                }
            }
            if !changed {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns candidates best first.
    fn search_layer(&self, q: &[f32], entries: &[u32], ef: usize, level: usize) -> Vec<Cand> {
        let mut visited: HashSet<u32> = HashSet::with_capacity(ef * 4);
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut best: BinaryHeap<std::cmp::Reverse<Cand>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e) {
                let c = Cand { sim: self.sim(q, e), slot: e };
                frontier.push(c);
                best.push(std::cmp::Reverse(c));
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().map(|w| w.0);
            if let Some(w) = worst {
                if best.len() >= ef && c < w {
                    break;
                }
            }
            for &n in &self.links[c.slot as usize][level] {
                if !visited.insert(n) {
                    continue;
                }
                let cand = Cand { sim: self.sim(q, n), slot: n };
                let admit = best.len() < ef || best.peek().is_some_and(|w| cand > w.0);
                if admit {
                    frontier.push(cand);
                    best.push(std::cmp::Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every neighbor already kept, then top up with the
    /// closest rejected candidates.
    fn select_neighbors(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for c in sorted {
            if kept.len() >= m {
                break;
            }
            let v = self.vec_at(c.slot);
            if kept.iter().all(|&r| dot(v, self.vec_at(r)) < c.sim) {
                kept.push(c.slot);
            } else {
                pruned.push(c.slot);
            }
        }
        for p in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(p);
        }
        kept
    }

    /// Insert a vector (normalized on the way in). Returns a migration
    /// request once the live count exceeds `max_vectors`.
    pub fn insert(&mut self, id: u32, v: &[f32]) -> Result<Option<MigrationRequest>> {
        if v.len() != self.d {
            return Err(Error::Shape {
                expected: self.d,
                actual: v.len(),
            });
        }
        if self.slot_of.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let mut q = v.to_vec();
        if (crate::util::norm(&q) - 1.0).abs() > 1e-6 {
            normalize(&mut q);
        }
        let level = self.random_level();
        self.link_new(id, q, level);
        self.order.push_back(id);
        Ok(self.pending_migration())
    }

    fn link_new(&mut self, id: u32, q: Vec<f32>, level: usize) {
        let slot = self.ids.len() as u32;
        self.vectors.extend_from_slice(&q);
        self.ids.push(id);
        self.deleted.push(false);
        self.links.push(vec![Vec::new(); level + 1]);
        self.slot_of.insert(id, slot);
        let Some(mut cur) = self.entry else {
            self.entry = Some(slot);
            self.max_level = level;
            return;
        };
        for lc in (level + 1..=self.max_level).rev() {
            cur = self.greedy(&q, cur, lc);
        }
        let mut entries = vec![cur];
        for lc in (0..=level.min(self.max_level)).rev() {
            let cands = self.search_layer(&q, &entries, self.cfg.ef_construction, lc);
            let neigh = self.select_neighbors(&cands, self.cfg.m);
            for &n in &neigh {
                self.links[n as usize][lc].push(slot);
                if self.links[n as usize][lc].len() > self.max_links(lc) {
                    self.shrink(n, lc);
                }
            }
            self.links[slot as usize][lc] = neigh;
            entries = cands.iter().map(|c| c.slot).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
    }

    fn shrink(&mut self, node: u32, level: usize) {
        let base = self.vec_at(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][level]
            .iter()
            .map(|&n| Cand {
                sim: dot(&base, self.vec_at(n)),
                slot: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, self.max_links(level));
        self.links[node as usize][level] = kept;
    }

    fn pending_migration(&self) -> Option<MigrationRequest> {
        (self.order.len() > self.cfg.max_vectors).then(|| MigrationRequest {
            ids: self.order.iter().take(self.cfg.migration_batch).copied().collect(),
        })
    }

    /// Tombstone `ids`. All ids are checked before anything is removed.
    pub fn remove(&mut self, ids: &[u32]) -> Result<()> {
        let mut seen = HashSet::with_capacity(ids.len());
        for id in ids {
            if !self.slot_of.contains_key(id) || !seen.insert(*id) {
                return Err(Error::Migration(format!("id {id} is not in the hot tier")));
            }
        }
        for id in ids {
            let slot = self.slot_of.remove(id).expect("checked");
            self.deleted[slot as usize] = true;
            self.tombstones += 1;
        }
        self.order.retain(|id| !seen.contains(id));
        if self.tombstones * 4 > self.cfg.max_vectors {
            self.rebuild();
        }
        Ok(())
    }

    /// Re-insert live nodes in insertion order, dropping tombstones.
    pub fn rebuild(&mut self) {
        let live: Vec<(u32, Vec<f32>)> = self
            .order
            .iter()
            .map(|id| (*id, self.vec_at(self.slot_of[id]).to_vec()))
            .collect();
        self.rebuilds += 1;
        let rebuilds = self.rebuilds;
        let cfg = self.cfg;
        *self = HotGraph::new(self.d, cfg).expect("validated config");
        self.rebuilds = rebuilds;
        self.rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(rebuilds));
        for (id, v) in live {
            let level = self.random_level();
            self.link_new(id, v, level);
            self.order.push_back(id);
        }
    }

    pub fn search_ef(&self, query: &[f32], k: usize, ef: usize) -> Vec<DenseHit> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        if k == 0 || query.len() != self.d || self.order.is_empty() {
            return Vec::new();
        }
        let mut cur = entry;
        for lc in (1..=self.max_level).rev() {
            cur = self.greedy(query, cur, lc);
        }
        let ef = ef.max(k) + self.tombstones.min(ef.max(k));
        let cands = self.search_layer(query, &[cur], ef, 0);
        cands
            .into_iter()
            .filter(|c| !self.deleted[c.slot as usize])
            .take(k)
            .map(|c| DenseHit {
                id: self.ids[c.slot as usize],
                score: c.sim,
            })
            .collect()
    }

    /// Live slots reachable from the entry point on layer 0 (through any
    /// node, tombstoned or not) versus live count.
    pub fn layer0_reachable(&self) -> (usize, usize) {
        let Some(entry) = self.entry else {
            return (0, 0);
        };
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![entry];
        seen[entry as usize] = true;
        let mut live = 0;
        while let Some(s) = stack.pop() {
            if !self.deleted[s as usize] {
                live += 1;
            }
            for &n in &self.links[s as usize][0] {
                if !seen[n as usize] {
                    seen[n as usize] = true;
                    stack.push(n);
                }
            }
        }
        (live, self.order.len())
    }

    /// Largest neighbor list found on each layer kind (layer 0, upper).
    pub fn max_degree(&self) -> (usize, usize) {
        let mut l0 = 0;
        let mut up = 0;
        for node in &self.links {
            for (l, n) in node.iter().enumerate() {
                if l == 0 {
                    l0 = l0.max(n.len());
                } else {
                    up = up.max(n.len());
                }
            }
        }
        (l0, up)
    }
}

impl DenseSearcher for HotGraph {
    fn dimension(&self) -> usize {
        self.d
    }

    fn len(&self) -> usize {
        self.order.len()
    }

    fn search(&self, query: &[f32], k: usize) -> Vec<DenseHit> {
        self.search_ef(query, k, self.cfg.ef_search)
    }
}
