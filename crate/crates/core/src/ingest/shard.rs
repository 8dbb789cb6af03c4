use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record;
use crate::error::{Error, IoContext, Result};
use crate::text::Chunk;
use crate::util::{put_u32, sync_dir, ByteReader};

const SHARD_MAGIC: &[u8; 8] = b"TKSHARD1";

/// Description of one durable shard file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shard_id: u32,
    pub chunk_count: u64,
    pub byte_size: u64,
    /// SHA-256 of the whole shard file, hex encoded.
    pub content_digest: String,
    pub path: PathBuf,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn shard_path(dir: &Path, shard_id: u32) -> PathBuf {
    dir.join(format!("shard-{shard_id:06}.tks"))
}

fn manifest_path(dir: &Path, shard_id: u32) -> PathBuf {
    dir.join(format!("shard-{shard_id:06}.json"))
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).at(&tmp)?;
    f.write_all(bytes).at(&tmp)?;
    f.sync_all().at(&tmp)?;
    drop(f);
    fs::rename(&tmp, path).at(path)?;
    Ok(())
}

/// Write `buffer` as shard `shard_id` in `dir`. The shard and its manifest
/// are synced to disk before the manifest is returned.
pub fn flush_shard(buffer: &[Chunk], shard_id: u32, dir: &Path) -> Result<ShardManifest> {
    if buffer.is_empty() {
        return Err(Error::EmptyInput("shard buffer"));
    }
    let mut bytes = Vec::with_capacity(16 + buffer.iter().map(|c| c.text.len() + 64).sum::<usize>());
    bytes.extend_from_slice(SHARD_MAGIC);
    put_u32(&mut bytes, shard_id);
    put_u32(&mut bytes, buffer.len() as u32);
    let mut rec = Vec::new();
    for chunk in buffer {
        rec.clear();
        record::encode(chunk, &mut rec);
        put_u32(&mut bytes, rec.len() as u32);
        bytes.extend_from_slice(&rec);
    }
    let path = shard_path(dir, shard_id);
    write_synced(&path, &bytes)?;
    let manifest = ShardManifest {
        shard_id,
        chunk_count: buffer.len() as u64,
        byte_size: bytes.len() as u64,
        content_digest: hex(&Sha256::digest(&bytes)),
        path,
    };
    write_synced(
        &manifest_path(dir, shard_id),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    sync_dir(dir).at(dir)?;
    Ok(manifest)
}

/// Read a shard's bytes and check them against its manifest.
pub(crate) fn load_verified(manifest: &ShardManifest) -> Result<Vec<u8>> {
    let bytes = fs::read(&manifest.path).map_err(|_| Error::CorruptShard(manifest.shard_id))?;
    if bytes.len() as u64 != manifest.byte_size
        || hex(&Sha256::digest(&bytes)) != manifest.content_digest
    {
        return Err(Error::CorruptShard(manifest.shard_id));
    }
    Ok(bytes)
}

pub fn verify_shard(manifest: &ShardManifest) -> Result<()> {
    load_verified(manifest).map(|_| ())
}

/// Iterate `(record bytes)` of a verified shard buffer.
pub(crate) fn records(shard_id: u32, bytes: &[u8]) -> Result<Vec<&[u8]>> {
    let corrupt = |_| Error::CorruptShard(shard_id);
    let mut r = ByteReader::new(bytes);
    if r.bytes(8).map_err(corrupt)? != SHARD_MAGIC {
        return Err(Error::CorruptShard(shard_id));
    }
    let _id = r.u32().map_err(corrupt)?;
    let count = r.u32().map_err(corrupt)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32().map_err(corrupt)? as usize;
        out.push(r.bytes(len).map_err(corrupt)?);
    }
    Ok(out)
}

/// Decode every chunk of a shard after verifying its digest.
pub fn read_shard(manifest: &ShardManifest) -> Result<Vec<Chunk>> {
    let bytes = load_verified(manifest)?;
    records(manifest.shard_id, &bytes)?
        .into_iter()
        .map(|r| record::decode(r).map(|c| c.to_chunk()))
        .collect()
}

/// Manifests persisted in `dir`, ordered by shard id.
pub fn read_manifests(dir: &Path) -> Result<Vec<ShardManifest>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let bytes = fs::read(&path).at(&path)?;
            out.push(serde_json::from_slice::<ShardManifest>(&bytes)?);
        }
    }
    out.sort_by_key(|m| m.shard_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Language;

    pub(crate) fn chunks(n: usize, tag: &str) -> Vec<Chunk> {
        (0..n)
            .map(|i| {
                let text = format!("{tag} chunk number {i} body");
                Chunk {
                    chunk_id: crate::text::chunk_id(tag, (i as u32, i as u32 + 5), &text),
                    doc_id: format!("{tag}-doc"),
                    token_span: (i as u32, i as u32 + 5),
                    text,
                    language: Language::En,
                }
            })
            .collect()
    }

    #[test]
    fn flush_counts_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let buf = chunks(50, "a");
        let m = flush_shard(&buf, 0, dir.path()).unwrap();
        assert_eq!(m.chunk_count, 50);
        assert_eq!(read_shard(&m).unwrap(), buf);
        assert_eq!(buf.len(), 50, "caller buffer untouched");
    }

    #[test]
    fn consecutive_flushes_have_increasing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let a = flush_shard(&chunks(3, "a"), 0, dir.path()).unwrap();
        let b = flush_shard(&chunks(3, "b"), 1, dir.path()).unwrap();
        assert_eq!((a.shard_id, b.shard_id), (0, 1));
        assert_eq!(read_manifests(dir.path()).unwrap(), vec![a, b]);
    }

    #[test]
    fn byte_flip_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = flush_shard(&chunks(5, "a"), 7, dir.path()).unwrap();
        let mut bytes = fs::read(&m.path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&m.path, bytes).unwrap();
        assert!(matches!(verify_shard(&m), Err(Error::CorruptShard(7))));
    }

    #[test]
    fn empty_buffer_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(flush_shard(&[], 0, dir.path()).is_err());
    }

    #[test]
    fn unwritable_dir_is_io_error() {
        let r = flush_shard(&chunks(1, "a"), 0, Path::new("/proc/definitely/not/here"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
