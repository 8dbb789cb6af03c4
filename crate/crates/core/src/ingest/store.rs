//! Merged chunk store.
//!
//! File layout, little-endian:
//!
//! ```text
//! header   "TKSTORE1" | version u32 | reserved u32
//! records  (len u32 | record bytes)*
//! index    record offset u64 * count
//! footer   index_offset u64 | count u64 | "TKSTEND1"
//! ```
//!
//! The footer makes the store random-access through a memory map without
//! reading the record section.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;

use super::record;
pub use super::record::ChunkRef;
use super::shard::{load_verified, records, ShardManifest};
use crate::error::{Error, IoContext, Result};
use crate::text::Chunk;
use crate::util::{sync_dir, ByteReader};

const STORE_MAGIC: &[u8; 8] = b"TKSTORE1";
const STORE_END: &[u8; 8] = b"TKSTEND1";
const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const FOOTER_LEN: usize = 24;

/// Read-only, memory-mapped chunk store.
#[derive(Debug)]
pub struct ChunkStore {
    path: PathBuf,
    map: Option<Mmap>,
    index_offset: usize,
    count: usize,
}

impl ChunkStore {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).at(path)?;
        let len = file.metadata().at(path)?.len() as usize;
        if len < HEADER_LEN + FOOTER_LEN {
            return Err(Error::Format(format!("{}: store too short", path.display())));
        }
        // SAFETY: the store is immutable once renamed into place.
        let map = unsafe { Mmap::map(&file) }.at(path)?;
        if &map[..8] != STORE_MAGIC {
            return Err(Error::Format(format!("{}: bad store magic", path.display())));
        }
        let mut h = ByteReader::at(&map, 8);
        let version = h.u32()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let mut f = ByteReader::at(&map, len - FOOTER_LEN);
        let index_offset = f.u64()? as usize;
        let count = f.u64()? as usize;
        if f.bytes(8)? != STORE_END {
            return Err(Error::Format(format!("{}: bad store footer", path.display())));
        }
        if index_offset
            .checked_add(count.checked_mul(8).unwrap_or(usize::MAX))
            .map_or(true, |end| end != len - FOOTER_LEN)
        {
            return Err(Error::Format(format!("{}: inconsistent footer", path.display())));
        }
        Ok(ChunkStore {
            path: path.to_path_buf(),
            map: Some(map),
            index_offset,
            count,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn bytes(&self) -> &[u8] {
        self.map.as_deref().unwrap_or(&[])
    }

    fn raw(&self, ordinal: usize) -> Result<&[u8]> {
        if ordinal >= self.count {
            return Err(Error::Format(format!(
                "ordinal {ordinal} out of range (store has {})",
                self.count
            )));
        }
        let buf = self.bytes();
        let off = ByteReader::at(buf, self.index_offset + ordinal * 8).u64()? as usize;
        let mut r = ByteReader::at(buf, off);
        let len = r.u32()? as usize;
        r.bytes(len)
    }

    pub fn get_ref(&self, ordinal: usize) -> Result<ChunkRef<'_>> {
        record::decode(self.raw(ordinal)?)
    }

    pub fn get(&self, ordinal: usize) -> Result<Chunk> {
        self.get_ref(ordinal).map(|c| c.to_chunk())
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<ChunkRef<'_>>> + '_ {
        (0..self.count).map(move |i| self.get_ref(i))
    }

    pub fn file_size(&self) -> u64 {
        self.bytes().len() as u64
    }
}

/// Streaming writer for a new store; commits by rename.
pub struct StoreWriter {
    tmp: PathBuf,
    out: PathBuf,
    w: Option<BufWriter<File>>,
    pos: u64,
    offsets: Vec<u64>,
}

impl StoreWriter {
    pub fn create(out: &Path) -> Result<Self> {
        let tmp = out.with_extension(format!("tmp-{}", std::process::id()));
        let file = File::create(&tmp).at(&tmp)?;
        let mut w = BufWriter::with_capacity(1 << 20, file);
        w.write_all(STORE_MAGIC).at(&tmp)?;
        w.write_all(&STORE_VERSION.to_le_bytes()).at(&tmp)?;
        w.write_all(&0u32.to_le_bytes()).at(&tmp)?;
        Ok(StoreWriter {
            tmp,
            out: out.to_path_buf(),
            w: Some(w),
            pos: HEADER_LEN as u64,
            offsets: Vec::new(),
        })
    }

    fn writer(&mut self) -> &mut BufWriter<File> {
        self.w.as_mut().expect("writer is live until commit")
    }

    pub fn push(&mut self, chunk: &Chunk) -> Result<()> {
        let mut buf = Vec::with_capacity(chunk.text.len() + 64);
        record::encode(chunk, &mut buf);
        self.push_encoded(&buf)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub(crate) fn push_encoded(&mut self, rec: &[u8]) -> Result<()> {
        self.offsets.push(self.pos);
        let tmp = self.tmp.clone();
        let w = self.writer();
        w.write_all(&(rec.len() as u32).to_le_bytes()).at(&tmp)?;
        w.write_all(rec).at(&tmp)?;
        self.pos += 4 + rec.len() as u64;
        Ok(())
    }

    pub fn commit(mut self) -> Result<ChunkStore> {
        let index_offset = self.pos;
        let mut idx = Vec::with_capacity(self.offsets.len() * 8);
        for o in &self.offsets {
            idx.extend_from_slice(&o.to_le_bytes());
        }
        let count = self.offsets.len() as u64;
        let tmp = self.tmp.clone();
        let mut w = self.w.take().expect("writer is live until commit");
        w.write_all(&idx).at(&tmp)?;
        w.write_all(&index_offset.to_le_bytes()).at(&tmp)?;
        w.write_all(&count.to_le_bytes()).at(&tmp)?;
        w.write_all(STORE_END).at(&tmp)?;
        let file = w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
        file.sync_all().at(&self.tmp)?;
        drop(file);
        fs::rename(&self.tmp, &self.out).at(&self.out)?;
        if let Some(parent) = self.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            sync_dir(parent).at(parent)?;
        }
        ChunkStore::open(&self.out)
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        // Uncommitted: discard the partial file.
        if self.w.take().is_some() {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

/// Concatenate verified shards (shard order, then record order) into a new
/// store at `out`. The previous file at `out`, if any, stays visible until
/// the final rename.
pub fn merge_shards(manifests: &[ShardManifest], out: &Path) -> Result<ChunkStore> {
    let mut writer = StoreWriter::create(out)?;
    for m in manifests {
        let bytes = load_verified(m)?;
        for rec in records(m.shard_id, &bytes)? {
            writer.push_encoded(rec)?;
        }
    }
    writer.commit()
}

/// Concatenate stores in order into `out`; `out` may be one of the inputs.
pub fn concat_stores(parts: &[&ChunkStore], out: &Path) -> Result<ChunkStore> {
    let mut writer = StoreWriter::create(out)?;
    for part in parts {
        for i in 0..part.len() {
            writer.push_encoded(part.raw(i)?)?;
        }
    }
    writer.commit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::flush_shard;
    use crate::text::Language;

    fn chunks(n: usize, tag: &str) -> Vec<Chunk> {
        (0..n)
            .map(|i| {
                let text = format!("{tag} {i}");
                Chunk {
                    chunk_id: crate::text::chunk_id(tag, (0, 2), &text),
                    doc_id: tag.into(),
                    token_span: (0, 2),
                    text,
                    language: Language::It,
                }
            })
            .collect()
    }

    #[test]
    fn merge_preserves_shard_then_record_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = chunks(50, "a");
        let b = chunks(20, "b");
        let ma = flush_shard(&a, 0, dir.path()).unwrap();
        let mb = flush_shard(&b, 1, dir.path()).unwrap();
        let store = merge_shards(&[ma, mb], &dir.path().join("chunks.tks")).unwrap();
        assert_eq!(store.len(), 70);
        let expected: Vec<Chunk> = a.iter().cloned().chain(b.iter().cloned()).collect();
        let got: Vec<Chunk> = store.iter().map(|c| c.unwrap().to_chunk()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn concat_in_place_keeps_old_map_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chunks.tks");
        let mut w = StoreWriter::create(&path).unwrap();
        for c in chunks(3, "a") {
            w.push(&c).unwrap();
        }
        let base = w.commit().unwrap();
        let mut w = StoreWriter::create(&dir.path().join("extra.tks")).unwrap();
        for c in chunks(2, "b") {
            w.push(&c).unwrap();
        }
        let extra = w.commit().unwrap();
        let merged = concat_stores(&[&base, &extra], &path).unwrap();
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.get(3).unwrap().doc_id, "b");
        assert_eq!(base.len(), 3);
        assert_eq!(base.get(2).unwrap().text, "a 2");
    }

    #[test]
    fn empty_merge_is_valid_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = merge_shards(&[], &dir.path().join("s.tks")).unwrap();
        assert!(store.is_empty());
        assert!(store.get(0).is_err());
    }

    #[test]
    fn corrupt_shard_aborts_and_keeps_old_store() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.tks");
        let m0 = flush_shard(&chunks(3, "old"), 0, dir.path()).unwrap();
        merge_shards(&[m0], &out).unwrap();

        let m1 = flush_shard(&chunks(3, "new"), 1, dir.path()).unwrap();
        let mut bytes = fs::read(&m1.path).unwrap();
        bytes[20] ^= 1;
        fs::write(&m1.path, bytes).unwrap();
        assert!(matches!(merge_shards(&[m1], &out), Err(Error::CorruptShard(1))));

        let store = ChunkStore::open(&out).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.get(0).unwrap().doc_id, "old");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp-"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn truncated_store_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.tks");
        let m0 = flush_shard(&chunks(3, "x"), 0, dir.path()).unwrap();
        merge_shards(&[m0], &out).unwrap();
        let bytes = fs::read(&out).unwrap();
        fs::write(&out, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(ChunkStore::open(&out), Err(Error::Format(_))));
    }
}
