use serde::{Deserialize, Serialize};

use super::kmeans::{assign, kmeans, sample_rows, KMeansConfig};
use crate::error::{Error, Result};

/// Product-quantization codebook: `m` subspaces of `d / m` dimensions with
/// `2^nbits` centroids each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqCodebook {
    pub d: usize,
    pub m: usize,
    pub nbits: usize,
    /// `m × 2^nbits × (d/m)` floats, subspace-major.
    pub centroids: Vec<f32>,
    pub trained_on: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqParams {
    pub m: usize,
    pub nbits: usize,
}

impl Default for PqParams {
    fn default() -> Self {
        PqParams { m: 8, nbits: 8 }
    }
}

impl PqParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.m == 0 || d % self.m != 0 {
            return Err(Error::InvalidConfig(format!("dimension {d} is not divisible by m={}", self.m)));
        }
        if !(1..=8).contains(&self.nbits) {
            return Err(Error::InvalidConfig(format!("nbits must be in 1..=8, got {}", self.nbits)));
        }
        if (self.m * self.nbits) % 8 != 0 {
            return Err(Error::InvalidConfig(format!(
                "m·nbits = {} is not a whole number of bytes",
                self.m * self.nbits
            )));
        }
        Ok(())
    }

    pub fn code_len(&self) -> usize {
        self.m * self.nbits / 8
    }
}

impl PqCodebook {
    /// Train one k-means per subspace over at most `max_train` rows of the
    /// flattened `sample`.
    pub fn train(sample: &[f32], d: usize, params: PqParams, seed: u64, max_train: usize) -> Result<Self> {
        params.validate(d)?;
        if sample.len() % d != 0 {
            return Err(Error::Shape {
                expected: d,
                actual: sample.len() % d,
            });
        }
        let ksub = 1usize << params.nbits;
        let n = sample.len() / d;
        if n < ksub {
            return Err(Error::Train(format!("need at least {ksub} training vectors, got {n}")));
        }
        let sample = sample_rows(sample, d, max_train.max(ksub), seed ^ 0x9E37);
        let n = sample.len() / d;
        let dsub = d / params.m;
        let mut centroids = Vec::with_capacity(params.m * ksub * dsub);
        let mut sub = vec![0.0f32; n * dsub];
        for j in 0..params.m {
            for (i, row) in sample.chunks_exact(d).enumerate() {
                sub[i * dsub..(i + 1) * dsub].copy_from_slice(&row[j * dsub..(j + 1) * dsub]);
            }
            let c = kmeans(&sub, dsub, &KMeansConfig::new(ksub, seed.wrapping_add(j as u64)))?;
            centroids.extend_from_slice(&c);
        }
        Ok(PqCodebook {
            d,
            m: params.m,
            nbits: params.nbits,
            centroids,
            trained_on: n,
        })
    }

    pub fn params(&self) -> PqParams {
        PqParams {
            m: self.m,
            nbits: self.nbits,
        }
    }

    pub fn ksub(&self) -> usize {
        1 << self.nbits
    }

    pub fn dsub(&self) -> usize {
        self.d / self.m
    }

    pub fn code_len(&self) -> usize {
        self.params().code_len()
    }

    fn subspace(&self, j: usize) -> &[f32] {
        let size = self.ksub() * self.dsub();
        &self.centroids[j * size..(j + 1) * size]
    }

    pub fn centroid(&self, j: usize, c: usize) -> &[f32] {
        let dsub = self.dsub();
        &self.subspace(j)[c * dsub..(c + 1) * dsub]
    }

    /// Nearest-centroid index per subspace for every row of `vectors`.
    pub fn quantize(&self, vectors: &[f32]) -> Result<Vec<Vec<u8>>> {
        if vectors.len() % self.d != 0 {
            return Err(Error::Shape {
                expected: self.d,
                actual: vectors.len() % self.d,
            });
        }
        let n = vectors.len() / self.d;
        let dsub = self.dsub();
        let mut codes = vec![vec![0u8; self.m]; n];
        let mut sub = vec![0.0f32; n * dsub];
        for j in 0..self.m {
            for (i, row) in vectors.chunks_exact(self.d).enumerate() {
                sub[i * dsub..(i + 1) * dsub].copy_from_slice(&row[j * dsub..(j + 1) * dsub]);
            }
            for (code, (c, _)) in codes.iter_mut().zip(assign(&sub, dsub, self.subspace(j))) {
                code[j] = c as u8;
            }
        }
        Ok(codes)
    }

    /// Packed codes (`code_len` bytes each) for every row, concatenated.
    pub fn encode_batch(&self, vectors: &[f32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(vectors.len() / self.d.max(1) * self.code_len());
        for ids in self.quantize(vectors)? {
            out.extend_from_slice(&pack(&ids, self.nbits));
        }
        Ok(out)
    }

    pub fn encode(&self, v: &[f32]) -> Result<Vec<u8>> {
        if v.len() != self.d {
            return Err(Error::Shape {
                expected: self.d,
                actual: v.len(),
            });
        }
        self.encode_batch(v)
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.d);
        for (j, c) in unpack(code, self.m, self.nbits).into_iter().enumerate() {
            out.extend_from_slice(self.centroid(j, c as usize));
        }
        out
    }

    /// Inner products between the query's subvectors and every centroid,
    /// `m × 2^nbits`, for asymmetric scoring.
    pub fn lookup_table(&self, query: &[f32]) -> Vec<f32> {
        let dsub = self.dsub();
        let ksub = self.ksub();
        let mut lut = Vec::with_capacity(self.m * ksub);
        for j in 0..self.m {
            let q = &query[j * dsub..(j + 1) * dsub];
            for c in 0..ksub {
                lut.push(crate::util::dot(q, self.centroid(j, c)));
            }
        }
        lut
    }

    /// Mean squared reconstruction error over the rows of `vectors`.
    pub fn reconstruction_error(&self, vectors: &[f32]) -> Result<f64> {
        let n = vectors.len() / self.d;
        if n == 0 {
            return Ok(0.0);
        }
        let codes = self.encode_batch(vectors)?;
        let mut total = 0.0f64;
        for (v, code) in vectors.chunks_exact(self.d).zip(codes.chunks_exact(self.code_len())) {
            total += crate::util::l2_sq(v, &self.decode(code)) as f64;
        }
        Ok(total / n as f64)
    }
}

/// Pack `nbits`-wide ids little-endian bit order into `ids.len()·nbits/8` bytes.
pub fn pack(ids: &[u8], nbits: usize) -> Vec<u8> {
    if nbits == 8 {
        return ids.to_vec();
    }
    let mut out = vec![0u8; (ids.len() * nbits).div_ceil(8)];
    let mut bit = 0usize;
    for &id in ids {
        let v = (id as u16) << (bit % 8);
        out[bit / 8] |= v as u8;
        if bit % 8 + nbits > 8 {
            out[bit / 8 + 1] |= (v >> 8) as u8;
        }
        bit += nbits;
    }
    out
}

pub fn unpack(code: &[u8], m: usize, nbits: usize) -> Vec<u8> {
    if nbits == 8 {
        return code[..m].to_vec();
    }
    let mask = ((1u16 << nbits) - 1) as u16;
    let mut out = Vec::with_capacity(m);
    let mut bit = 0usize;
    for _ in 0..m {
        let lo = code[bit / 8] as u16;
        let hi = code.get(bit / 8 + 1).copied().unwrap_or(0) as u16;
        out.push((((lo | (hi << 8)) >> (bit % 8)) & mask) as u8);
        bit += nbits;
    }
    out
}

/// Sum of per-subspace lookups for a packed code.
#[inline]
pub fn adc_score(lut: &[f32], code: &[u8], m: usize, nbits: usize) -> f32 {
    let ksub = 1usize << nbits;
    if nbits == 8 {
        let mut s = 0.0f32;
        for (j, &c) in code[..m].iter().enumerate() {
            s += lut[j * ksub + c as usize];
        }
        return s;
    }
    if nbits == 4 {
        let mut s = 0.0f32;
        for (b, &byte) in code.iter().enumerate() {
            let j = b * 2;
            s += lut[j * ksub + (byte & 0xF) as usize];
            s += lut[(j + 1) * ksub + (byte >> 4) as usize];
        }
        return s;
    }
    unpack(code, m, nbits)
        .into_iter()
        .enumerate()
        .map(|(j, c)| lut[j * ksub + c as usize])
        .sum()
}
