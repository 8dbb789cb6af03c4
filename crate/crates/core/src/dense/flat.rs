use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{hits_from, DenseHit, DenseSearcher};
use crate::error::{Error, IoContext, Result};
use crate::util::{dot, put_u32, put_u64, sync_dir, write_f32s, ByteReader, TopK};

const MAGIC: &[u8; 8] = b"TKFLAT01";
const VERSION: u32 = 1;

/// Exact inner-product search over full-precision vectors.
#[derive(Debug, Clone, Default)]
pub struct FlatIndex {
    d: usize,
    ids: Vec<u32>,
    vectors: Vec<f32>,
}

impl FlatIndex {
    pub fn new(d: usize) -> Self {
        FlatIndex {
            d,
            ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn add(&mut self, ids: &[u32], vectors: &[f32]) -> Result<()> {
        if vectors.len() != ids.len() * self.d {
            return Err(Error::Shape {
                expected: ids.len() * self.d,
                actual: vectors.len(),
            });
        }
        self.ids.extend_from_slice(ids);
        self.vectors.extend_from_slice(vectors);
        Ok(())
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp).at(&tmp)?);
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        put_u32(&mut head, VERSION);
        put_u32(&mut head, self.d as u32);
        put_u64(&mut head, self.ids.len() as u64);
        for id in &self.ids {
            put_u32(&mut head, *id);
        }
        w.write_all(&head).at(&tmp)?;
        write_f32s(&mut w, &self.vectors).at(&tmp)?;
        let f = w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
        f.sync_all().at(&tmp)?;
        fs::rename(&tmp, path).at(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            sync_dir(parent).at(parent)?;
        }
        Ok(())
    }

    pub fn open(path: &Path) -> Result<Self> {
        let buf = fs::read(path).at(path)?;
        let mut r = ByteReader::new(&buf);
        if r.bytes(8)? != MAGIC {
            return Err(Error::Format("bad flat index magic".into()));
        }
        if r.u32()? != VERSION {
            return Err(Error::Format("unsupported flat index version".into()));
        }
        let d = r.u32()? as usize;
        let n = r.u64()? as usize;
        let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let vectors = r.f32_vec(n * d)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes in flat index".into()));
        }
        Ok(FlatIndex { d, ids, vectors })
    }
}

impl DenseSearcher for FlatIndex {
    fn dimension(&self) -> usize {
        self.d
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn search(&self, query: &[f32], k: usize) -> Vec<DenseHit> {
        let mut top = TopK::new(k);
        if self.d == 0 || query.len() != self.d {
            return Vec::new();
        }
        for (id, v) in self.ids.iter().zip(self.vectors.chunks_exact(self.d)) {
            top.push(*id, dot(query, v));
        }
        hits_from(top.into_sorted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_unit_vectors;

    #[test]
    fn roundtrip_and_exact_search() {
        let vs = random_unit_vectors(50, 16, 1);
        let mut f = FlatIndex::new(16);
        let ids: Vec<u32> = (100..150).collect();
        f.add(&ids, &vs.concat()).unwrap();
        let hits = f.search(&vs[7], 3);
        assert_eq!(hits[0].id, 107);
        assert!((hits[0].score - 1.0).abs() < 1e-5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.tks");
        f.persist(&p).unwrap();
        let g = FlatIndex::open(&p).unwrap();
        assert_eq!(g.search(&vs[3], 5), f.search(&vs[3], 5));
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(FlatIndex::open(&p), Err(Error::Format(_))));
    }
}
