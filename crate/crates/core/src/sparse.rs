//! BM25 inverted index with a memory-mapped on-disk layout.
//!
//! ```text
//! header    "TKSPARS1" | version u32 | reserved u32
//! meta      doc_count u64 | total_len u64 | k1 f64 | b f64 | term_count u64
//!           | lexicon_off u64 | terms_off u64 | postings_off u64
//!           | doc_len u32 * doc_count
//! lexicon   (term_off u64 | term_len u32 | df u32 | high u32 | reserved u32
//!           | postings_off u64 | high_max f64 | low_max f64) * term_count
//!           followed by the concatenated term bytes, sorted bytewise
//! postings  per term: (chunk_ordinal u32 | tf u32) * high
//!           then chunk_ordinal u32 * (df - high) for the tf = 1 postings
//! ```
//!
//! Each term's postings are split into two impact tiers, tf ≥ 2 and tf = 1,
//! both sorted by ordinal and each carrying the exact maximum BM25
//! contribution among its postings. Query evaluation treats the tiers as
//! separate lists, so the bulky tf = 1 tier of a term can be skipped while
//! its few high-impact postings are still visited.
//!
//! Building spills sorted runs to disk once an in-memory posting budget is
//! reached, then k-way merges them, so index construction does not need the
//! whole corpus' postings in memory.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::ingest::ChunkStore;
use crate::text::{analyze, detect_and_tokenize};
use crate::util::{put_u32, put_u64, sync_dir, ByteReader};

const MAGIC: &[u8; 8] = b"TKSPARS1";
const VERSION: u32 = 2;
const HEADER_LEN: usize = 16;
const META_FIXED: usize = 8 * 8;
const LEX_ENTRY: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseIndexMeta {
    pub doc_count: u64,
    pub avg_doc_len: f64,
    pub k1: f64,
    pub b: f64,
    pub term_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseHit {
    pub chunk_ordinal: u32,
    pub score: f64,
}

/// Inverse document frequency with a floor at zero.
pub fn bm25_idf(doc_count: u64, df: u64) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

#[inline]
fn bm25_term(idf: f64, tf: u32, len: u32, k1: f64, b: f64, avg: f64) -> f64 {
    let tf = tf as f64;
    idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len as f64 / avg))
}

fn avg_len(total_len: u64, doc_count: u64) -> f64 {
    if doc_count > 0 {
        total_len as f64 / doc_count as f64
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct SparseBuildOptions {
    pub params: Bm25Params,
    /// Postings buffered in memory before a sorted run is spilled.
    pub run_budget: usize,
}

impl Default for SparseBuildOptions {
    fn default() -> Self {
        SparseBuildOptions {
            params: Bm25Params::default(),
            run_budget: 8 << 20,
        }
    }
}

type Postings = Vec<(u32, u32)>;

/// Where a term's two impact tiers live and how much each can contribute.
#[derive(Debug, Clone, Copy)]
struct Tiers {
    df: u32,
    high: u32,
    off: u64,
    high_max: f64,
    low_max: f64,
}

impl Tiers {
    fn bytes(&self) -> usize {
        self.high as usize * 8 + (self.df - self.high) as usize * 4
    }
}

fn write_run(path: &Path, mut terms: Vec<(String, Postings)>) -> Result<()> {
    terms.sort_unstable_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path).at(path)?);
    let mut buf = Vec::new();
    for (term, postings) in terms {
        buf.clear();
        put_u32(&mut buf, term.len() as u32);
        buf.extend_from_slice(term.as_bytes());
        put_u32(&mut buf, postings.len() as u32);
        for (o, tf) in postings {
            put_u32(&mut buf, o);
            put_u32(&mut buf, tf);
        }
        w.write_all(&buf).at(path)?;
    }
    w.flush().at(path)?;
    Ok(())
}

struct RunReader {
    r: BufReader<File>,
    path: PathBuf,
}

impl RunReader {
    fn next(&mut self) -> Result<Option<(Vec<u8>, Vec<u8>)>> {
        let mut len = [0u8; 4];
        match self.r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::io(&self.path, e)),
        }
        let mut term = vec![0u8; u32::from_le_bytes(len) as usize];
        self.r.read_exact(&mut term).at(&self.path)?;
        self.r.read_exact(&mut len).at(&self.path)?;
        let mut postings = vec![0u8; u32::from_le_bytes(len) as usize * 8];
        self.r.read_exact(&mut postings).at(&self.path)?;
        Ok(Some((term, postings)))
    }
}

/// Build the sparse index over every chunk of `store` into `out`.
pub fn build_sparse(store: &ChunkStore, out: &Path, opts: &SparseBuildOptions) -> Result<SparseIndexMeta> {
    let work = out.with_extension(format!("build-{}", std::process::id()));
    fs::create_dir_all(&work).at(&work)?;
    let result = build_inner(store, out, opts, &work);
    let _ = fs::remove_dir_all(&work);
    result
}

fn build_inner(
    store: &ChunkStore,
    out: &Path,
    opts: &SparseBuildOptions,
    work: &Path,
) -> Result<SparseIndexMeta> {
    let mut doc_lens: Vec<u32> = Vec::with_capacity(store.len());
    let mut total_len: u64 = 0;
    let mut current: HashMap<String, Postings> = HashMap::new();
    let mut buffered = 0usize;
    let mut runs: Vec<PathBuf> = Vec::new();
    let mut tf: HashMap<String, u32> = HashMap::new();

    for (ordinal, chunk) in store.iter().enumerate() {
        let chunk = chunk?;
        let terms = analyze(chunk.text, chunk.language);
        doc_lens.push(terms.len() as u32);
        total_len += terms.len() as u64;
        tf.clear();
        for t in terms {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (t, n) in tf.drain() {
            current.entry(t).or_default().push((ordinal as u32, n));
            buffered += 1;
        }
        if buffered >= opts.run_budget {
            let p = work.join(format!("run-{:05}", runs.len()));
            write_run(&p, current.drain().collect())?;
            runs.push(p);
            buffered = 0;
        }
    }

    // Postings go to a side file first; term count is only known after the
    // merge, and the lexicon precedes postings in the final layout.
    let postings_path = work.join("postings");
    let mut pw = BufWriter::with_capacity(1 << 20, File::create(&postings_path).at(&postings_path)?);
    let mut lexicon: Vec<(Vec<u8>, Tiers)> = Vec::new();
    let mut postings_len: u64 = 0;
    let doc_count = doc_lens.len() as u64;
    let avg = avg_len(total_len, doc_count).max(f64::MIN_POSITIVE);
    let Bm25Params { k1, b } = opts.params;

    let (mut high, mut low) = (Vec::new(), Vec::new());
    let mut emit = |term: Vec<u8>, postings: &[u8], pw: &mut BufWriter<File>| -> Result<()> {
        let df = (postings.len() / 8) as u32;
        let idf = bm25_idf(doc_count, df as u64);
        let mut t = Tiers {
            df,
            high: 0,
            off: postings_len,
            high_max: 0.0,
            low_max: 0.0,
        };
        high.clear();
        low.clear();
        for c in postings.chunks_exact(8) {
            let o = u32::from_le_bytes(c[..4].try_into().unwrap());
            let tf = u32::from_le_bytes(c[4..].try_into().unwrap());
            let score = bm25_term(idf, tf, doc_lens[o as usize], k1, b, avg);
            if tf == 1 {
                low.extend_from_slice(&c[..4]);
                t.low_max = t.low_max.max(score);
            } else {
                high.extend_from_slice(c);
                t.high += 1;
                t.high_max = t.high_max.max(score);
            }
        }
        pw.write_all(&high).at(&postings_path)?;
        pw.write_all(&low).at(&postings_path)?;
        postings_len += (high.len() + low.len()) as u64;
        lexicon.push((term, t));
        Ok(())
    };

    if runs.is_empty() {
        let mut terms: Vec<(String, Postings)> = current.drain().collect();
        terms.sort_unstable_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
        let mut buf = Vec::new();
        for (term, postings) in terms {
            buf.clear();
            for (o, n) in postings {
                put_u32(&mut buf, o);
                put_u32(&mut buf, n);
            }
            emit(term.into_bytes(), &buf, &mut pw)?;
        }
    } else {
        if !current.is_empty() {
            let p = work.join(format!("run-{:05}", runs.len()));
            write_run(&p, current.drain().collect())?;
            runs.push(p);
        }
        let mut readers: Vec<RunReader> = runs
            .iter()
            .map(|p| {
                Ok(RunReader {
                    r: BufReader::with_capacity(1 << 18, File::open(p).at(p)?),
                    path: p.clone(),
                })
            })
            .collect::<Result<_>>()?;
        // Min-heap on (term, run index): runs hold ascending ordinals, so
        // concatenating equal terms in run order keeps postings sorted.
        let mut heap: BinaryHeap<Reverse<(Vec<u8>, usize)>> = BinaryHeap::new();
        let mut pending: Vec<Option<Vec<u8>>> = vec![None; readers.len()];
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some((t, p)) = r.next()? {
                heap.push(Reverse((t, i)));
                pending[i] = Some(p);
            }
        }
        let mut merged: Vec<u8> = Vec::new();
        while let Some(Reverse((term, i))) = heap.pop() {
            merged.clear();
            merged.extend_from_slice(&pending[i].take().expect("pending postings"));
            if let Some((t, p)) = readers[i].next()? {
                heap.push(Reverse((t, i)));
                pending[i] = Some(p);
            }
            while heap.peek().is_some_and(|Reverse((t, _))| *t == term) {
                let Reverse((_, j)) = heap.pop().expect("peeked");
                merged.extend_from_slice(&pending[j].take().expect("pending postings"));
                if let Some((t, p)) = readers[j].next()? {
                    heap.push(Reverse((t, j)));
                    pending[j] = Some(p);
                }
            }
            emit(term, &merged, &mut pw)?;
        }
    }
    pw.flush().at(&postings_path)?;
    drop(pw);

    let term_count = lexicon.len() as u64;
    let lexicon_off = (HEADER_LEN + META_FIXED + doc_lens.len() * 4) as u64;
    let terms_off = lexicon_off + term_count * LEX_ENTRY as u64;
    let term_bytes: u64 = lexicon.iter().map(|(t, ..)| t.len() as u64).sum();
    // Align postings to 8 bytes.
    let postings_off = (terms_off + term_bytes + 7) & !7;

    let tmp = out.with_extension(format!("tmp-{}", std::process::id()));
    let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp).at(&tmp)?);
    let mut head = Vec::with_capacity(HEADER_LEN + META_FIXED + doc_lens.len() * 4);
    head.extend_from_slice(MAGIC);
    put_u32(&mut head, VERSION);
    put_u32(&mut head, 0);
    put_u64(&mut head, doc_count);
    put_u64(&mut head, total_len);
    head.extend_from_slice(&opts.params.k1.to_le_bytes());
    head.extend_from_slice(&opts.params.b.to_le_bytes());
    put_u64(&mut head, term_count);
    put_u64(&mut head, lexicon_off);
    put_u64(&mut head, terms_off);
    put_u64(&mut head, postings_off);
    for l in &doc_lens {
        put_u32(&mut head, *l);
    }
    w.write_all(&head).at(&tmp)?;
    let mut lex = Vec::with_capacity(lexicon.len() * LEX_ENTRY);
    let mut toff = terms_off;
    for (t, tiers) in &lexicon {
        put_u64(&mut lex, toff);
        put_u32(&mut lex, t.len() as u32);
        put_u32(&mut lex, tiers.df);
        put_u32(&mut lex, tiers.high);
        put_u32(&mut lex, 0);
        put_u64(&mut lex, postings_off + tiers.off);
        lex.extend_from_slice(&tiers.high_max.to_le_bytes());
        lex.extend_from_slice(&tiers.low_max.to_le_bytes());
        toff += t.len() as u64;
    }
    w.write_all(&lex).at(&tmp)?;
    for (t, ..) in &lexicon {
        w.write_all(t).at(&tmp)?;
    }
    let pad = (postings_off - terms_off - term_bytes) as usize;
    w.write_all(&[0u8; 8][..pad]).at(&tmp)?;
    w.flush().at(&tmp)?;
    let mut file = w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
    let mut src = File::open(&postings_path).at(&postings_path)?;
    file.seek(SeekFrom::End(0)).at(&tmp)?;
    std::io::copy(&mut src, &mut file).at(&tmp)?;
    file.sync_all().at(&tmp)?;
    drop(file);
    fs::rename(&tmp, out).at(out)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        sync_dir(parent).at(parent)?;
    }
    Ok(SparseIndexMeta {
        doc_count,
        avg_doc_len: avg_len(total_len, doc_count),
        k1: opts.params.k1,
        b: opts.params.b,
        term_count,
    })
}

#[derive(Debug)]
enum Backing {
    Mapped(Mmap),
    Heap(Vec<u8>),
}

impl Backing {
    fn bytes(&self) -> &[u8] {
        match self {
            Backing::Mapped(m) => m,
            Backing::Heap(v) => v,
        }
    }
}

/// Read-only sparse index; safe to share across threads.
#[derive(Debug)]
pub struct SparseIndex {
    data: Backing,
    meta: SparseIndexMeta,
    lexicon_off: usize,
    doc_lens_off: usize,
}

impl SparseIndex {
    /// Memory-map the index file.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).at(path)?;
        // SAFETY: index files are immutable after the build's rename.
        let map = unsafe { Mmap::map(&file) }.at(path)?;
        Self::from_backing(Backing::Mapped(map))
    }

    /// Read the whole index onto the heap.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_backing(Backing::Heap(fs::read(path).at(path)?))
    }

    fn from_backing(data: Backing) -> Result<Self> {
        let buf = data.bytes();
        let mut r = ByteReader::new(buf);
        if r.bytes(8)? != MAGIC {
            return Err(Error::Format("bad sparse index magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported sparse index version {version}")));
        }
        r.u32()?;
        let doc_count = r.u64()?;
        let total_len = r.u64()?;
        let k1 = r.f64()?;
        let b = r.f64()?;
        let term_count = r.u64()?;
        let lexicon_off = r.u64()? as usize;
        let terms_off = r.u64()? as usize;
        let postings_off = r.u64()? as usize;
        let doc_lens_off = r.position();
        let expect_lex = doc_lens_off + doc_count as usize * 4;
        if lexicon_off != expect_lex
            || terms_off != lexicon_off + term_count as usize * LEX_ENTRY
            || postings_off > buf.len()
            || terms_off > buf.len()
        {
            return Err(Error::Format("inconsistent sparse index sections".into()));
        }
        let meta = SparseIndexMeta {
            doc_count,
            avg_doc_len: avg_len(total_len, doc_count),
            k1,
            b,
            term_count,
        };
        let idx = SparseIndex {
            data,
            meta,
            lexicon_off,
            doc_lens_off,
        };
        // The last posting list must fit in the file.
        if term_count > 0 {
            let (_, t) = idx.lex_entry(term_count as usize - 1)?;
            if t.off as usize + t.bytes() > idx.data.bytes().len() {
                return Err(Error::Format("sparse index truncated".into()));
            }
        }
        Ok(idx)
    }

    pub fn meta(&self) -> &SparseIndexMeta {
        &self.meta
    }

    pub fn file_size(&self) -> u64 {
        self.data.bytes().len() as u64
    }

    fn lex_entry(&self, i: usize) -> Result<(&[u8], Tiers)> {
        let buf = self.data.bytes();
        let mut r = ByteReader::at(buf, self.lexicon_off + i * LEX_ENTRY);
        let toff = r.u64()? as usize;
        let tlen = r.u32()? as usize;
        let df = r.u32()?;
        let high = r.u32()?;
        r.u32()?;
        let t = Tiers {
            df,
            high,
            off: r.u64()?,
            high_max: r.f64()?,
            low_max: r.f64()?,
        };
        if high > df {
            return Err(Error::Format(format!("term {i}: {high} high-impact postings of {df}")));
        }
        let term = ByteReader::at(buf, toff).bytes(tlen)?;
        Ok((term, t))
    }

    fn find(&self, term: &str) -> Result<Option<Tiers>> {
        let needle = term.as_bytes();
        let (mut lo, mut hi) = (0usize, self.meta.term_count as usize);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let (t, tiers) = self.lex_entry(mid)?;
            match t.cmp(needle) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Ok(Some(tiers)),
            }
        }
        Ok(None)
    }

    fn tier_lists(&self, t: &Tiers, term: usize) -> Result<[TermList<'_>; 2]> {
        let raw = ByteReader::at(self.data.bytes(), t.off as usize).bytes(t.bytes())?;
        let (high, low) = raw.split_at(t.high as usize * 8);
        let idf = bm25_idf(self.meta.doc_count, t.df as u64);
        Ok([
            TermList {
                raw: high,
                stride: 8,
                idf,
                upper: t.high_max,
                term,
            },
            TermList {
                raw: low,
                stride: 4,
                idf,
                upper: t.low_max,
                term,
            },
        ])
    }

    /// Posting list of an analyzed term.
    pub fn postings(&self, term: &str) -> Result<Vec<(u32, u32)>> {
        let Some(t) = self.find(term)? else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(t.df as usize);
        for l in self.tier_lists(&t, 0)? {
            out.extend((0..l.len()).map(|p| (l.ordinal(p).expect("in range"), l.tf(p))));
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Every `(term, df)` in lexicon order.
    pub fn terms(&self) -> Result<Vec<(String, u32)>> {
        (0..self.meta.term_count as usize)
            .map(|i| {
                let (t, tiers) = self.lex_entry(i)?;
                Ok((String::from_utf8_lossy(t).into_owned(), tiers.df))
            })
            .collect()
    }

    pub fn doc_len(&self, ordinal: u32) -> Result<u32> {
        ByteReader::at(self.data.bytes(), self.doc_lens_off + ordinal as usize * 4).u32()
    }

    /// Analyze `query` (language detected, English rules when unknown) and
    /// score it.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SparseHit>> {
        let terms = match detect_and_tokenize(query) {
            Ok(ts) => ts.tokens,
            Err(_) => return Ok(Vec::new()),
        };
        self.search_terms(&terms, k)
    }

    /// Non-empty tier lists of the distinct query terms, in term order, and
    /// the number of distinct terms found.
    fn resolve(&self, terms: &[String]) -> Result<(Vec<TermList<'_>>, usize)> {
        let mut uniq: Vec<&str> = terms.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut lists = Vec::new();
        let mut found = 0;
        for t in uniq {
            if let Some(tiers) = self.find(t)? {
                lists.extend(self.tier_lists(&tiers, found)?.into_iter().filter(|l| l.len() > 0));
                found += 1;
            }
        }
        Ok((lists, found))
    }

    fn scorer(&self) -> Scorer<'_> {
        let buf = self.data.bytes();
        Scorer {
            lens: &buf[self.doc_lens_off..self.doc_lens_off + self.meta.doc_count as usize * 4],
            k1: self.meta.k1,
            b: self.meta.b,
            avg: self.meta.avg_doc_len.max(f64::MIN_POSITIVE),
        }
    }

    /// Score already-analyzed terms with MaxScore pruning over the impact
    /// tiers. Repeated terms count once. Per-document scores are summed in
    /// sorted term order, so results are bit-identical to
    /// [`SparseIndex::search_terms_exhaustive`].
    pub fn search_terms(&self, terms: &[String], k: usize) -> Result<Vec<SparseHit>> {
        if k == 0 || self.meta.doc_count == 0 {
            return Ok(Vec::new());
        }
        let (mut lists, nterms) = self.resolve(terms)?;
        if lists.is_empty() {
            return Ok(Vec::new());
        }
        let sc = self.scorer();
        // Ascending upper bound; prefix[i] bounds what lists[..i] can add.
        lists.sort_by(|a, b| a.upper.total_cmp(&b.upper).then(a.term.cmp(&b.term)).then(a.stride.cmp(&b.stride)));
        let t = lists.len();
        let mut prefix = vec![0.0f64; t + 1];
        for (i, l) in lists.iter().enumerate() {
            prefix[i + 1] = prefix[i] + l.upper;
        }
        let slack = |x: f64| x * (1.0 + 1e-12);
        let mut pos = vec![0usize; t];
        let mut cur: Vec<u32> = lists.iter().map(|l| l.ordinal(0).unwrap_or(u32::MAX)).collect();
        let mut top = ScoreHeap::new(k);
        let mut essential = 0usize;
        let mut contrib = vec![0.0f64; nterms];
        loop {
            let theta = top.threshold();
            if let Some(theta) = theta {
                while essential < t && slack(prefix[essential + 1]) < theta {
                    essential += 1;
                }
            }
            let doc = cur[essential..].iter().copied().min().unwrap_or(u32::MAX);
            if doc == u32::MAX {
                break;
            }
            contrib.iter_mut().for_each(|c| *c = 0.0);
            let mut bound = prefix[essential];
            for i in essential..t {
                if cur[i] == doc {
                    let l = &lists[i];
                    let c = sc.term(l, pos[i], doc);
                    contrib[l.term] = c;
                    bound += c;
                    pos[i] += 1;
                    cur[i] = l.ordinal(pos[i]).unwrap_or(u32::MAX);
                }
            }
            let mut alive = true;
            for i in (0..essential).rev() {
                if theta.is_some_and(|th| slack(bound) < th) {
                    alive = false;
                    break;
                }
                let l = &lists[i];
                bound -= l.upper;
                if cur[i] < doc {
                    pos[i] = l.seek(pos[i], doc);
                    cur[i] = l.ordinal(pos[i]).unwrap_or(u32::MAX);
                }
                if cur[i] == doc {
                    let c = sc.term(l, pos[i], doc);
                    contrib[l.term] = c;
                    bound += c;
                }
            }
            if alive {
                top.push(doc, contrib.iter().sum());
            }
        }
        Ok(top.into_sorted())
    }

    /// Term-at-a-time scoring of every posting; the reference for
    /// [`SparseIndex::search_terms`].
    pub fn search_terms_exhaustive(&self, terms: &[String], k: usize) -> Result<Vec<SparseHit>> {
        if k == 0 || self.meta.doc_count == 0 {
            return Ok(Vec::new());
        }
        let (lists, _) = self.resolve(terms)?;
        let sc = self.scorer();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for list in &lists {
            for p in 0..list.len() {
                let o = list.ordinal(p).expect("in range");
                *acc.entry(o).or_insert(0.0) += sc.term(list, p, o);
            }
        }
        let mut top = ScoreHeap::new(k);
        for (o, s) in acc {
            top.push(o, s);
        }
        Ok(top.into_sorted())
    }
}

/// One impact tier of a term: `(ordinal, tf)` pairs with stride 8, or bare
/// ordinals with stride 4 when every tf is 1.
struct TermList<'a> {
    raw: &'a [u8],
    stride: usize,
    idf: f64,
    upper: f64,
    /// Index of the term among the query's distinct terms.
    term: usize,
}

impl TermList<'_> {
    fn len(&self) -> usize {
        self.raw.len() / self.stride
    }

    #[inline]
    fn ordinal(&self, p: usize) -> Option<u32> {
        let i = p * self.stride;
        let c = self.raw.get(i..i + 4)?;
        Some(u32::from_le_bytes(c.try_into().unwrap()))
    }

    #[inline]
    fn tf(&self, p: usize) -> u32 {
        if self.stride == 4 {
            return 1;
        }
        u32::from_le_bytes(self.raw[p * 8 + 4..p * 8 + 8].try_into().unwrap())
    }

    /// First position at or after `from` whose ordinal is ≥ `doc`.
    fn seek(&self, from: usize, doc: u32) -> usize {
        let n = self.len();
        if from >= n || self.ordinal(from).unwrap() >= doc {
            return from;
        }
        // Gallop, then binary search inside the bracket.
        let mut step = 1;
        let mut lo = from;
        let mut hi = from + 1;
        while hi < n && self.ordinal(hi).unwrap() < doc {
            lo = hi;
            step *= 2;
            hi = (hi + step).min(n);
        }
        let mut lo = lo + 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.ordinal(mid).unwrap() < doc {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

struct Scorer<'a> {
    lens: &'a [u8],
    k1: f64,
    b: f64,
    avg: f64,
}

impl Scorer<'_> {
    #[inline]
    fn term(&self, list: &TermList<'_>, p: usize, doc: u32) -> f64 {
        let li = doc as usize * 4;
        let len = u32::from_le_bytes(self.lens[li..li + 4].try_into().unwrap());
        bm25_term(list.idf, list.tf(p), len, self.k1, self.b, self.avg)
    }
}

#[derive(PartialEq)]
struct Ranked(SparseHit);

impl Eq for Ranked {}

impl Ord for Ranked {
    // Greater means worse, so the max-heap top is the weakest kept hit.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .score
            .total_cmp(&self.0.score)
            .then(self.0.chunk_ordinal.cmp(&other.0.chunk_ordinal))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct ScoreHeap {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl ScoreHeap {
    fn new(k: usize) -> Self {
        ScoreHeap {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, chunk_ordinal: u32, score: f64) {
        let item = Ranked(SparseHit { chunk_ordinal, score });
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if self.heap.peek().is_some_and(|w| item < *w) {
            self.heap.pop();
            self.heap.push(item);
        }
    }

    fn threshold(&self) -> Option<f64> {
        (self.heap.len() == self.k).then(|| self.heap.peek().map(|w| w.0.score)).flatten()
    }

    fn into_sorted(self) -> Vec<SparseHit> {
        let mut v: Vec<SparseHit> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.chunk_ordinal.cmp(&b.chunk_ordinal)));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{flush_shard, merge_shards};
    use crate::text::{Chunk, Language};

    pub(crate) fn store_of(dir: &Path, texts: &[&str]) -> ChunkStore {
        let chunks: Vec<Chunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i}"),
                doc_id: format!("d{i}"),
                token_span: (0, 1),
                text: t.to_string(),
                language: Language::En,
            })
            .collect();
        let shards = dir.join("shards");
        fs::create_dir_all(&shards).unwrap();
        let ms = if chunks.is_empty() {
            vec![]
        } else {
            vec![flush_shard(&chunks, 0, &shards).unwrap()]
        };
        merge_shards(&ms, &dir.join("store.tks")).unwrap()
    }

    #[test]
    fn hand_counted_lexicon() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &["cat cat dog"]);
        let out = dir.path().join("sparse.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let idx = SparseIndex::open(&out).unwrap();
        assert_eq!(
            idx.terms().unwrap(),
            vec![("cat".to_string(), 1), ("dog".to_string(), 1)]
        );
        assert_eq!(idx.postings("cat").unwrap(), vec![(0, 2)]);
        assert_eq!(idx.postings("dog").unwrap(), vec![(0, 1)]);
        assert_eq!(idx.doc_len(0).unwrap(), 3);
    }

    #[test]
    fn empty_store_gives_empty_results() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &[]);
        let out = dir.path().join("sparse.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let idx = SparseIndex::open(&out).unwrap();
        assert!(idx.search("anything", 10).unwrap().is_empty());
    }

    #[test]
    fn absent_term_and_single_doc() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &["the quick brown fox"]);
        let out = dir.path().join("sparse.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let idx = SparseIndex::open(&out).unwrap();
        assert!(idx.search("zebra", 5).unwrap().is_empty());
        let hits = idx.search("fox", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_ordinal, 0);
        assert!(hits[0].score > 0.0);
    }

    #[test]
    fn rebuild_is_byte_identical_and_spilling_matches() {
        let dir = tempfile::tempdir().unwrap();
        let texts: Vec<String> = (0..200)
            .map(|i| format!("alpha beta{} gamma{} delta{} common", i % 7, i % 13, i % 3))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let store = store_of(dir.path(), &refs);
        let a = dir.path().join("a.tks");
        let b = dir.path().join("b.tks");
        let c = dir.path().join("c.tks");
        build_sparse(&store, &a, &SparseBuildOptions::default()).unwrap();
        build_sparse(&store, &b, &SparseBuildOptions::default()).unwrap();
        let tiny = SparseBuildOptions {
            run_budget: 17,
            ..Default::default()
        };
        build_sparse(&store, &c, &tiny).unwrap();
        let fa = fs::read(&a).unwrap();
        assert_eq!(fa, fs::read(&b).unwrap());
        assert_eq!(fa, fs::read(&c).unwrap(), "external merge must match in-memory build");
    }

    #[test]
    fn mapped_and_heap_paths_agree() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &["a b c", "b c d", "c d e e"]);
        let out = dir.path().join("s.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let m = SparseIndex::open(&out).unwrap();
        let h = SparseIndex::load(&out).unwrap();
        for q in ["a", "c d", "e b", "zzz"] {
            assert_eq!(m.search(q, 10).unwrap(), h.search(q, 10).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &["a b c", "b c d"]);
        let out = dir.path().join("s.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let bytes = fs::read(&out).unwrap();
        fs::write(&out, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(SparseIndex::open(&out), Err(Error::Format(_))));
        fs::write(&out, b"garbage!").unwrap();
        assert!(SparseIndex::open(&out).is_err());
    }

    #[test]
    fn pruned_search_equals_exhaustive_on_zipf_text() {
        use crate::synth::Vocabulary;
        use rand::SeedableRng;
        let vocab = Vocabulary::new(3000, 1.0, 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let texts: Vec<String> = (0..2000)
            .map(|_| (0..60).map(|_| vocab.sample(&mut rng)).collect::<Vec<_>>().join(" "))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &refs);
        let out = dir.path().join("s.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let idx = SparseIndex::open(&out).unwrap();
        for qi in 0..50 {
            let q: Vec<String> = (0..2 + qi % 6)
                .map(|_| analyze(vocab.sample(&mut rng), Language::En).remove(0))
                .collect();
            for k in [1, 10, 100] {
                assert_eq!(
                    idx.search_terms(&q, k).unwrap(),
                    idx.search_terms_exhaustive(&q, k).unwrap()
                );
            }
        }
    }

    #[test]
    fn tier_bounds_are_the_best_scores_in_each_tier() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(dir.path(), &["a a b", "a b c c c d", "b", "c a", "d d"]);
        let out = dir.path().join("s.tks");
        build_sparse(&store, &out, &SparseBuildOptions::default()).unwrap();
        let idx = SparseIndex::open(&out).unwrap();
        for (term, _) in idx.terms().unwrap() {
            let t = idx.find(&term).unwrap().unwrap();
            let scores: HashMap<u32, f64> = idx
                .search_terms_exhaustive(&[term.clone()], 10)
                .unwrap()
                .into_iter()
                .map(|h| (h.chunk_ordinal, h.score))
                .collect();
            let (mut high, mut low) = (0.0f64, 0.0f64);
            let postings = idx.postings(&term).unwrap();
            for (o, tf) in &postings {
                let best = if *tf == 1 { &mut low } else { &mut high };
                *best = best.max(scores[o]);
            }
            assert_eq!(t.high as usize, postings.iter().filter(|p| p.1 > 1).count(), "{term}");
            assert_eq!((t.high_max.to_bits(), t.low_max.to_bits()), (high.to_bits(), low.to_bits()), "{term}");
        }
    }

    #[test]
    fn idf_is_non_negative() {
        for df in 0..=10 {
            assert!(bm25_idf(10, df) >= 0.0);
        }
    }

    fn oracle(texts: &[String], query: &str, k: usize) -> Vec<(u32, f64)> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| analyze(t, Language::En)).collect();
        let n = docs.len() as f64;
        let avg = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
        let mut q = analyze(query, Language::En);
        q.sort();
        q.dedup();
        let mut scored: Vec<(u32, f64)> = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            let mut s = 0.0;
            let mut hit = false;
            for t in &q {
                let tf = d.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * d.len() as f64 / avg));
            }
            if hit {
                scored.push((i as u32, s));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(40))]
        #[test]
        fn matches_brute_force(
            docs in proptest::collection::vec(
                proptest::collection::vec(0usize..12, 1..30), 1..40),
            query in proptest::collection::vec(0usize..14, 1..5),
            k in 1usize..15,
        ) {
            const WORDS: [&str; 14] = ["river", "stone", "light", "garden", "window", "paper",
                "cloud", "engine", "forest", "silver", "market", "bridge", "absent", "missing"];
            let texts: Vec<String> = docs.iter()
                .map(|d| d.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" "))
                .collect();
            let q = query.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ");
            let dir = tempfile::tempdir().unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let store = store_of(dir.path(), &refs);
            let out = dir.path().join("s.tks");
            build_sparse(&store, &out, &SparseBuildOptions { run_budget: 23, ..Default::default() }).unwrap();
            let idx = SparseIndex::open(&out).unwrap();
            let terms = analyze(&q, Language::En);
            let got = idx.search_terms(&terms, k).unwrap();
            let want = oracle(&texts, &q, k);
            proptest::prop_assert_eq!(&got, &idx.search_terms_exhaustive(&terms, k).unwrap());
            proptest::prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                proptest::prop_assert!((g.score - w.1).abs() < 1e-9, "{:?} vs {:?}", g, w);
            }
            // Order by exact score; ties ascending ordinal.
            for pair in got.windows(2) {
                proptest::prop_assert!(pair[0].score > pair[1].score
                    || (pair[0].score == pair[1].score && pair[0].chunk_ordinal < pair[1].chunk_ordinal));
            }
            let got_ids: Vec<u32> = got.iter().map(|h| h.chunk_ordinal).collect();
            let want_ids: Vec<u32> = want.iter().map(|w| w.0).collect();
            if got.iter().zip(got.iter().skip(1)).all(|(a, b)| (a.score - b.score).abs() > 1e-9) {
                proptest::prop_assert_eq!(got_ids, want_ids);
            }
        }
    }
}
