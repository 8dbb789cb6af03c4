use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::graph::{HotGraph, HotGraphConfig, MigrationRequest};
use crate::dense::{ColdIndex, DenseHit, DenseSearcher};
use crate::error::{Error, IoContext, Result};
use crate::util::{put_u32, put_u64, sync_dir, write_f32s, ByteReader};

/// Move `req.ids` from `hot` into `cold`. Every id is validated before
/// either tier changes.
pub fn migrate_to_cold(hot: &mut HotGraph, cold: &mut ColdIndex, req: &MigrationRequest) -> Result<()> {
    if req.ids.is_empty() {
        return Ok(());
    }
    let mut seen = HashSet::with_capacity(req.ids.len());
    let mut vectors = Vec::with_capacity(req.ids.len() * hot.dimension());
    for id in &req.ids {
        if !seen.insert(*id) {
            return Err(Error::Migration(format!("id {id} requested twice")));
        }
        match hot.vector(*id) {
            Some(v) => vectors.extend_from_slice(v),
            None => return Err(Error::Migration(format!("id {id} is not in the hot tier"))),
        }
    }
    if cold.dimension() != hot.dimension() {
        return Err(Error::Shape {
            expected: cold.dimension(),
            actual: hot.dimension(),
        });
    }
    cold.add(&req.ids, &vectors)?;
    hot.remove(&req.ids)
}

/// Merge per-tier results into one ranking by raw cosine. An id present in
/// both tiers keeps its best score.
pub fn merge_dense(lists: &[Vec<DenseHit>], k: usize) -> Vec<DenseHit> {
    let mut all: Vec<DenseHit> = lists.iter().flatten().copied().collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut seen = HashSet::new();
    all.retain(|h| seen.insert(h.id));
    all.truncate(k);
    all
}

/// Hot graph plus cold index, searched as one dense channel. Ids are unique
/// across both tiers.
#[derive(Debug, Clone)]
pub struct TieredDense {
    hot: HotGraph,
    cold: ColdIndex,
    cold_ids: HashSet<u32>,
}

impl TieredDense {
    pub fn new(hot: HotGraph, cold: ColdIndex) -> Self {
        let cold_ids = cold.ids().into_iter().collect();
        TieredDense { hot, cold, cold_ids }
    }

    pub fn hot(&self) -> &HotGraph {
        &self.hot
    }

    pub fn cold(&self) -> &ColdIndex {
        &self.cold
    }

    pub fn contains(&self, id: u32) -> bool {
        self.hot.contains(id) || self.cold_ids.contains(&id)
    }

    /// Insert into the hot tier and run any migration it triggers.
    pub fn insert(&mut self, id: u32, v: &[f32]) -> Result<Option<MigrationRequest>> {
        if self.contains(id) {
            return Err(Error::DuplicateId(id));
        }
        let req = self.hot.insert(id, v)?;
        if let Some(r) = &req {
            self.migrate(r)?;
        }
        Ok(req)
    }

    /// Move `req.ids` from the hot tier to the cold tier.
    pub fn migrate(&mut self, req: &MigrationRequest) -> Result<()> {
        migrate_to_cold(&mut self.hot, &mut self.cold, req)?;
        self.cold_ids.extend(req.ids.iter().copied());
        Ok(())
    }

    pub fn searchable_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.hot.ids_in_order().chain(self.cold.ids()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn search(&self, query: &[f32], k: usize) -> Vec<DenseHit> {
        merge_dense(&[self.hot.search(query, k), self.cold.search(query, k)], k)
    }
}

const MAGIC: &[u8; 8] = b"TKHOT001";
const VERSION: u32 = 1;

/// Write live hot vectors in insertion order; the graph is rebuilt on load.
pub fn persist_hot(hot: &HotGraph, path: &Path) -> Result<()> {
    let cfg = hot.config();
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    put_u32(&mut head, VERSION);
    put_u32(&mut head, hot.dimension() as u32);
    for v in [cfg.max_vectors, cfg.m, cfg.ef_construction, cfg.ef_search, cfg.migration_batch] {
        put_u64(&mut head, v as u64);
    }
    put_u64(&mut head, cfg.seed);
    let ids: Vec<u32> = hot.ids_in_order().collect();
    put_u64(&mut head, ids.len() as u64);
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp).at(&tmp)?);
    w.write_all(&head).at(&tmp)?;
    for id in &ids {
        w.write_all(&id.to_le_bytes()).at(&tmp)?;
    }
    for id in &ids {
        write_f32s(&mut w, hot.vector(*id).expect("live id")).at(&tmp)?;
    }
    let f = w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
    f.sync_all().at(&tmp)?;
    fs::rename(&tmp, path).at(path)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        sync_dir(parent).at(parent)?;
    }
    Ok(())
}

pub fn load_hot(path: &Path) -> Result<HotGraph> {
    let buf = fs::read(path).at(path)?;
    let mut r = ByteReader::new(&buf);
    if r.bytes(8)? != MAGIC {
        return Err(Error::Format("bad hot snapshot magic".into()));
    }
    if r.u32()? != VERSION {
        return Err(Error::Format("unsupported hot snapshot version".into()));
    }
    let d = r.u32()? as usize;
    let mut f = [0usize; 5];
    for x in &mut f {
        *x = r.u64()? as usize;
    }
    let cfg = HotGraphConfig {
        max_vectors: f[0],
        m: f[1],
        ef_construction: f[2],
        ef_search: f[3],
        migration_batch: f[4],
        seed: r.u64()?,
    };
    let n = r.u64()? as usize;
    let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let vectors = r.f32_vec(n * d)?;
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes in hot snapshot".into()));
    }
    let mut g = HotGraph::new(d, cfg).map_err(|e| Error::Format(e.to_string()))?;
    for (id, v) in ids.iter().zip(vectors.chunks_exact(d.max(1))) {
        g.insert(*id, v)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{IvfParams, PqParams};
    use crate::synth::random_unit_vectors;
    use proptest::prelude::*;

    fn cold(d: usize) -> ColdIndex {
        let sample = random_unit_vectors(512, d, 99).concat();
        ColdIndex::train(
            &sample,
            d,
            &IvfParams {
                nlist: 8,
                nprobe: 8,
                pq: PqParams { m: 4, nbits: 8 },
                seed: 42,
                max_train: 10_000,
            },
        )
        .unwrap()
    }

    fn tiers(cap: usize, batch: usize, d: usize) -> TieredDense {
        let hot = HotGraph::new(
            d,
            HotGraphConfig {
                max_vectors: cap,
                migration_batch: batch,
                ef_construction: 64,
                ..Default::default()
            },
        )
        .unwrap();
        TieredDense::new(hot, cold(d))
    }

    #[test]
    fn migrate_all_and_none() {
        let vs = random_unit_vectors(30, 16, 1);
        let mut t = tiers(100, 10, 16);
        for (i, v) in vs.iter().enumerate() {
            t.insert(i as u32, v).unwrap();
        }
        migrate_to_cold(&mut t.hot, &mut t.cold, &MigrationRequest { ids: vec![] }).unwrap();
        assert_eq!(t.hot.len(), 30);
        let all = MigrationRequest {
            ids: t.hot.ids_in_order().collect(),
        };
        migrate_to_cold(&mut t.hot, &mut t.cold, &all).unwrap();
        assert_eq!(t.hot.len(), 0);
        assert_eq!(t.searchable_ids(), (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn missing_id_leaves_both_tiers_untouched() {
        let vs = random_unit_vectors(5, 16, 2);
        let mut t = tiers(100, 10, 16);
        for (i, v) in vs.iter().enumerate() {
            t.insert(i as u32, v).unwrap();
        }
        let before = t.searchable_ids();
        let err = migrate_to_cold(&mut t.hot, &mut t.cold, &MigrationRequest { ids: vec![0, 1, 42] });
        assert!(matches!(err, Err(Error::Migration(_))));
        assert_eq!(t.hot.len(), 5);
        assert_eq!(t.cold.len(), 0);
        assert_eq!(t.searchable_ids(), before);
    }

    #[test]
    fn overflow_then_migration_keeps_union() {
        let vs = random_unit_vectors(1200, 16, 3);
        let mut t = tiers(1000, 100, 16);
        for (i, v) in vs.iter().enumerate() {
            t.insert(i as u32, v).unwrap();
            assert!(t.hot.len() <= 1000);
        }
        assert_eq!(t.searchable_ids(), (0..1200).collect::<Vec<_>>());
        assert_eq!(t.cold.len(), 200);
        let hit = t.search(&vs[3], 1);
        assert_eq!(hit[0].id, 3, "migrated vector still searchable");
    }

    #[test]
    fn migrated_ids_stay_unique() {
        let d = 8;
        let mut t = tiers(4, 2, d);
        let vs = random_unit_vectors(6, d, 9);
        for (i, v) in vs.iter().enumerate() {
            t.insert(i as u32, v).unwrap();
        }
        assert!(!t.hot().contains(0));
        assert!(matches!(t.insert(0, &vs[0]), Err(Error::DuplicateId(0))));
        assert!(matches!(t.insert(5, &vs[0]), Err(Error::DuplicateId(5))));
        assert_eq!(t.searchable_ids(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn snapshot_roundtrip() {
        let vs = random_unit_vectors(50, 16, 4);
        let mut t = tiers(100, 10, 16);
        for (i, v) in vs.iter().enumerate() {
            t.insert(i as u32 * 3, v).unwrap();
        }
        t.hot.remove(&[0, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hot.tks");
        persist_hot(&t.hot, &p).unwrap();
        let g = load_hot(&p).unwrap();
        assert_eq!(g.ids_in_order().collect::<Vec<_>>(), t.hot.ids_in_order().collect::<Vec<_>>());
        assert_eq!(g.search(&vs[10], 3), t.hot.search(&vs[10], 3));
        fs::write(&p, b"TKHOT001").unwrap();
        assert!(load_hot(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn no_loss_under_random_ops(ops in proptest::collection::vec((0u8..4, any::<u16>()), 50..300)) {
            let d = 8;
            let mut t = tiers(40, 7, d);
            let mut inserted: Vec<u32> = Vec::new();
            let mut rng_vecs = random_unit_vectors(ops.len(), d, 5).into_iter();
            let mut next = 0u32;
            for (op, arg) in ops {
                match op {
                    0..=2 => {
                        t.insert(next, &rng_vecs.next().unwrap()).unwrap();
                        inserted.push(next);
                        next += 1;
                    }
                    _ => {
                        let live: Vec<u32> = t.hot().ids_in_order().collect();
                        if !live.is_empty() {
                            let id = live[arg as usize % live.len()];
                            let r = MigrationRequest { ids: vec![id] };
                            t.migrate(&r).unwrap();
                        }
                    }
                }
                prop_assert!(t.hot().len() <= 40);
                prop_assert_eq!(t.searchable_ids(), inserted.clone());
                let (reach, live) = t.hot().layer0_reachable();
                prop_assert_eq!(reach, live);
            }
        }
    }
}
