//! IVF-PQ cold tier.
//!
//! ```text
//! header     "TKCOLD01" | version u32 | d u32 | m u32 | nbits u32 | nlist u32
//!            | nprobe u32 | count u64 | trained_on u64
//! coarse     nlist × d f32
//! codebooks  m × 2^nbits × (d/m) f32
//! directory  nlist × (offset u64 | entries u64), offsets relative to lists
//! lists      per list: (id u32 | code) × entries
//! ```
//!
//! Opening copies header, centroids, codebooks and directory to the heap and
//! maps the list region lazily. Vectors added after opening live in
//! per-list heap segments until the next [`ColdIndex::persist`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use super::kmeans::{assign, kmeans, sample_rows, KMeansConfig};
use super::pq::{adc_score, PqCodebook, PqParams};
use super::{hits_from, DenseHit, DenseSearcher};
use crate::error::{Error, IoContext, Result};
use crate::util::{put_u32, put_u64, sync_dir, write_f32s, ByteReader, TopK};

const MAGIC: &[u8; 8] = b"TKCOLD01";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvfParams {
    pub nlist: usize,
    pub nprobe: usize,
    pub pq: PqParams,
    pub seed: u64,
    /// Upper bound on rows fed to each k-means run.
    pub max_train: usize,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams {
            nlist: 1000,
            nprobe: 10,
            pq: PqParams::default(),
            seed: 42,
            max_train: 65_536,
        }
    }
}

/// Byte breakdown of a persisted cold index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColdLayout {
    pub header: u64,
    pub coarse: u64,
    pub codebooks: u64,
    pub directory: u64,
    pub lists: u64,
}

impl ColdLayout {
    pub fn metadata(&self) -> u64 {
        self.header + self.coarse + self.codebooks + self.directory
    }

    pub fn total(&self) -> u64 {
        self.metadata() + self.lists
    }
}

#[derive(Debug)]
struct Base {
    map: Mmap,
    lists_off: usize,
    directory: Vec<(u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct ColdIndex {
    d: usize,
    nprobe: usize,
    coarse: Arc<Vec<f32>>,
    coarse_norms: Arc<Vec<f32>>,
    pq: Arc<PqCodebook>,
    base: Option<Arc<Base>>,
    base_count: usize,
    appended: Vec<Vec<u8>>,
    appended_count: usize,
}

impl ColdIndex {
    /// Train coarse centroids and PQ codebooks on `sample` (row-major, `d`
    /// columns). The result holds no vectors.
    pub fn train(sample: &[f32], d: usize, params: &IvfParams) -> Result<Self> {
        params.pq.validate(d)?;
        if d == 0 || sample.len() % d != 0 {
            return Err(Error::Shape {
                expected: d,
                actual: sample.len() % d.max(1),
            });
        }
        let n = sample.len() / d;
        let need = params.nlist.max(1 << params.pq.nbits);
        if n < need || params.nlist == 0 {
            return Err(Error::Train(format!("need at least {need} training vectors, got {n}")));
        }
        if params.nprobe == 0 || params.nprobe > params.nlist {
            return Err(Error::InvalidConfig(format!(
                "nprobe {} outside 1..={}",
                params.nprobe, params.nlist
            )));
        }
        let coarse_sample = sample_rows(sample, d, params.max_train.max(params.nlist), params.seed);
        let coarse = kmeans(&coarse_sample, d, &KMeansConfig::new(params.nlist, params.seed))?;
        drop(coarse_sample);
        let pq = PqCodebook::train(sample, d, params.pq, params.seed, params.max_train)?;
        Ok(Self::from_parts(d, params.nprobe, coarse, pq))
    }

    fn from_parts(d: usize, nprobe: usize, coarse: Vec<f32>, pq: PqCodebook) -> Self {
        let norms = coarse.chunks_exact(d).map(|c| c.iter().map(|x| x * x).sum()).collect();
        let nlist = coarse.len() / d;
        ColdIndex {
            d,
            nprobe,
            coarse: Arc::new(coarse),
            coarse_norms: Arc::new(norms),
            pq: Arc::new(pq),
            base: None,
            base_count: 0,
            appended: vec![Vec::new(); nlist],
            appended_count: 0,
        }
    }

    pub fn nlist(&self) -> usize {
        self.coarse_norms.len()
    }

    pub fn nprobe(&self) -> usize {
        self.nprobe
    }

    pub fn set_nprobe(&mut self, nprobe: usize) {
        self.nprobe = nprobe.clamp(1, self.nlist());
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.pq
    }

    fn entry_len(&self) -> usize {
        4 + self.pq.code_len()
    }

    /// Encode and append vectors to their nearest coarse lists.
    pub fn add(&mut self, ids: &[u32], vectors: &[f32]) -> Result<()> {
        if vectors.len() != ids.len() * self.d {
            return Err(Error::Shape {
                expected: ids.len() * self.d,
                actual: vectors.len(),
            });
        }
        if ids.is_empty() {
            return Ok(());
        }
        let lists = assign(vectors, self.d, &self.coarse);
        let codes = self.pq.encode_batch(vectors)?;
        let cl = self.pq.code_len();
        for ((id, (list, _)), code) in ids.iter().zip(lists).zip(codes.chunks_exact(cl)) {
            let seg = &mut self.appended[list as usize];
            seg.extend_from_slice(&id.to_le_bytes());
            seg.extend_from_slice(code);
        }
        self.appended_count += ids.len();
        Ok(())
    }

    fn base_list(&self, l: usize) -> &[u8] {
        match &self.base {
            Some(b) => {
                let (off, n) = b.directory[l];
                let start = b.lists_off + off as usize;
                &b.map[start..start + n as usize * self.entry_len()]
            }
            None => &[],
        }
    }

    /// Every stored id, list by list.
    pub fn ids(&self) -> Vec<u32> {
        let el = self.entry_len();
        let mut out = Vec::with_capacity(self.len());
        for l in 0..self.nlist() {
            for seg in [self.base_list(l), &self.appended[l]] {
                out.extend(seg.chunks_exact(el).map(|e| u32::from_le_bytes(e[..4].try_into().unwrap())));
            }
        }
        out
    }

    /// Coarse lists probed for `query`, nearest first.
    pub fn probe(&self, query: &[f32], nprobe: usize) -> Vec<usize> {
        let mut top = TopK::new(nprobe.min(self.nlist()));
        for (l, (c, n)) in self.coarse.chunks_exact(self.d).zip(self.coarse_norms.iter()).enumerate() {
            // ‖q − c‖² up to the constant ‖q‖².
            top.push(l as u32, -(n - 2.0 * crate::util::dot(query, c)));
        }
        top.into_sorted().into_iter().map(|(l, _)| l as usize).collect()
    }

    pub fn search_with(&self, query: &[f32], k: usize, nprobe: usize) -> Vec<DenseHit> {
        if query.len() != self.d || k == 0 || self.is_empty() {
            return Vec::new();
        }
        let lut = self.pq.lookup_table(query);
        let (m, nbits) = (self.pq.m, self.pq.nbits);
        let el = self.entry_len();
        let mut top = TopK::new(k);
        for l in self.probe(query, nprobe.max(1)) {
            for seg in [self.base_list(l), &self.appended[l]] {
                for e in seg.chunks_exact(el) {
                    let id = u32::from_le_bytes(e[..4].try_into().unwrap());
                    let s = adc_score(&lut, &e[4..], m, nbits).clamp(-1.0, 1.0);
                    top.push(id, s);
                }
            }
        }
        hits_from(top.into_sorted())
    }

    pub fn layout(&self) -> ColdLayout {
        let nlist = self.nlist() as u64;
        ColdLayout {
            header: HEADER_LEN as u64,
            coarse: nlist * self.d as u64 * 4,
            codebooks: self.pq.centroids.len() as u64 * 4,
            directory: nlist * 16,
            lists: self.len() as u64 * self.entry_len() as u64,
        }
    }

    /// Write base and appended entries into one file, atomically.
    pub fn persist(&self, path: &Path) -> Result<ColdLayout> {
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp).at(&tmp)?);
        let mut head = Vec::with_capacity(HEADER_LEN);
        head.extend_from_slice(MAGIC);
        put_u32(&mut head, VERSION);
        put_u32(&mut head, self.d as u32);
        put_u32(&mut head, self.pq.m as u32);
        put_u32(&mut head, self.pq.nbits as u32);
        put_u32(&mut head, self.nlist() as u32);
        put_u32(&mut head, self.nprobe as u32);
        put_u64(&mut head, self.len() as u64);
        put_u64(&mut head, self.pq.trained_on as u64);
        debug_assert_eq!(head.len(), HEADER_LEN);
        w.write_all(&head).at(&tmp)?;
        write_f32s(&mut w, &self.coarse).at(&tmp)?;
        write_f32s(&mut w, &self.pq.centroids).at(&tmp)?;
        let el = self.entry_len() as u64;
        let mut dir = Vec::with_capacity(self.nlist() * 16);
        let mut off = 0u64;
        for l in 0..self.nlist() {
            let n = (self.base_list(l).len() + self.appended[l].len()) as u64 / el;
            put_u64(&mut dir, off);
            put_u64(&mut dir, n);
            off += n * el;
        }
        w.write_all(&dir).at(&tmp)?;
        for l in 0..self.nlist() {
            w.write_all(self.base_list(l)).at(&tmp)?;
            w.write_all(&self.appended[l]).at(&tmp)?;
        }
        let f = w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
        f.sync_all().at(&tmp)?;
        drop(f);
        fs::rename(&tmp, path).at(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            sync_dir(parent).at(parent)?;
        }
        Ok(self.layout())
    }

    /// Map a persisted index. Only metadata is read eagerly.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).at(path)?;
        // SAFETY: index files are replaced by rename, never rewritten in place.
        let map = unsafe { Mmap::map(&file) }.at(path)?;
        let mut r = ByteReader::new(&map);
        if r.bytes(8)? != MAGIC {
            return Err(Error::Format("bad cold index magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported cold index version {version}")));
        }
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let nbits = r.u32()? as usize;
        let nlist = r.u32()? as usize;
        let nprobe = r.u32()? as usize;
        let count = r.u64()? as usize;
        let trained_on = r.u64()? as usize;
        let params = PqParams { m, nbits };
        params
            .validate(d)
            .map_err(|e| Error::Format(format!("bad cold index header: {e}")))?;
        if nlist == 0 {
            return Err(Error::Format("cold index has no lists".into()));
        }
        let coarse = r.f32_vec(nlist * d)?;
        let centroids = r.f32_vec(m * (1 << nbits) * (d / m))?;
        let mut directory = Vec::with_capacity(nlist);
        for _ in 0..nlist {
            directory.push((r.u64()?, r.u64()?));
        }
        let lists_off = r.position();
        let el = (4 + params.code_len()) as u64;
        let mut expected = 0u64;
        let mut total = 0u64;
        for &(off, n) in &directory {
            if off != expected {
                return Err(Error::Format("cold index directory is not contiguous".into()));
            }
            expected += n * el;
            total += n;
        }
        if total != count as u64 || lists_off as u64 + expected != map.len() as u64 {
            return Err(Error::Format("cold index truncated or inconsistent".into()));
        }
        let pq = PqCodebook {
            d,
            m,
            nbits,
            centroids,
            trained_on,
        };
        let mut idx = Self::from_parts(d, nprobe.clamp(1, nlist), coarse, pq);
        idx.base = Some(Arc::new(Base {
            map,
            lists_off,
            directory,
        }));
        idx.base_count = count;
        Ok(idx)
    }

    /// Drop cached pages of the mapped list region (best effort).
    pub fn advise_cold(&self) {
        #[cfg(unix)]
        if let Some(b) = &self.base {
            let _ = unsafe { b.map.unchecked_advise(memmap2::UncheckedAdvice::DontNeed) };
        }
    }
}

impl DenseSearcher for ColdIndex {
    fn dimension(&self) -> usize {
        self.d
    }

    fn len(&self) -> usize {
        self.base_count + self.appended_count
    }

    fn search(&self, query: &[f32], k: usize) -> Vec<DenseHit> {
        self.search_with(query, k, self.nprobe)
    }
}
