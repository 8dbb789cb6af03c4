use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::l2_sq;

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig { k, max_iter: 25, seed }
    }
}

const BLOCK: usize = 2048;

/// Nearest centroid and squared distance for every row of `data`.
pub fn assign(data: &[f32], d: usize, centroids: &[f32]) -> Vec<(u32, f32)> {
    let n = data.len() / d;
    let k = centroids.len() / d;
    let mut out = Vec::with_capacity(n);
    if k == 0 {
        return out;
    }
    let cnorm: Vec<f32> = centroids.chunks_exact(d).map(|c| c.iter().map(|x| x * x).sum()).collect();
    let mut prod = vec![0.0f32; BLOCK.min(n) * k];
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        let block = &data[start * d..(start + rows) * d];
        // prod = block · centroidsᵀ
        unsafe {
            matrixmultiply::sgemm(
                rows,
                d,
                k,
                1.0,
                block.as_ptr(),
                d as isize,
                1,
                centroids.as_ptr(),
                1,
                d as isize,
                0.0,
                prod.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        for r in 0..rows {
            let x = &block[r * d..(r + 1) * d];
            let xn: f32 = x.iter().map(|v| v * v).sum();
            let row = &prod[r * k..(r + 1) * k];
            let mut best = 0usize;
            let mut best_d = f32::INFINITY;
            for (c, (&p, &cn)) in row.iter().zip(&cnorm).enumerate() {
                let dist = cn - 2.0 * p;
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            out.push((best as u32, (xn + best_d).max(0.0)));
        }
    }
    out
}

fn plus_plus_seed(data: &[f32], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / d;
    let mut centroids = Vec::with_capacity(k * d);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(&data[first * d..(first + 1) * d]);
    let mut min_d: Vec<f64> = data.chunks_exact(d).map(|x| l2_sq(x, &centroids[..d]) as f64).collect();
    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in min_d.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if u < w {
                    pick = Some(i);
                    break;
                }
                u -= w;
            }
            pick.unwrap_or_else(|| min_d.iter().rposition(|&w| w > 0.0).expect("positive mass"))
        } else {
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = &data[pick * d..(pick + 1) * d];
        centroids.extend_from_slice(c);
        for (m, x) in min_d.iter_mut().zip(data.chunks_exact(d)) {
            let dist = l2_sq(x, c) as f64;
            if dist < *m {
                *m = dist;
            }
        }
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded
/// with the point farthest from its centroid. Returns `k × d` centroids.
pub fn kmeans(data: &[f32], d: usize, cfg: &KMeansConfig) -> Result<Vec<f32>> {
    if d == 0 || data.len() % d != 0 {
        return Err(Error::Train(format!("data length {} is not a multiple of {d}", data.len())));
    }
    let n = data.len() / d;
    let k = cfg.k;
    if k == 0 || n < k {
        return Err(Error::Train(format!("need at least {k} training points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_seed(data, d, k, &mut rng);
    let mut prev: Option<Vec<u32>> = None;
    for _ in 0..cfg.max_iter {
        let assigned = assign(data, d, &centroids);
        let labels: Vec<u32> = assigned.iter().map(|a| a.0).collect();
        if prev.as_ref() == Some(&labels) {
            break;
        }
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.chunks_exact(d).zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x) {
                *s += *v as f64;
            }
        }
        let mut far: Vec<usize> = Vec::new();
        if counts.contains(&0) {
            far = (0..n).collect();
            far.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
        }
        let mut far = far.into_iter();
        for c in 0..k {
            let dst = &mut centroids[c * d..(c + 1) * d];
            if counts[c] == 0 {
                let p = far.next().unwrap_or(0);
                dst.copy_from_slice(&data[p * d..(p + 1) * d]);
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (o, s) in dst.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *o = (*s * inv) as f32;
                }
            }
        }
        prev = Some(labels);
    }
    Ok(centroids)
}

/// Deterministic subsample of at most `max` rows.
pub fn sample_rows(data: &[f32], d: usize, max: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / d;
    if n <= max {
        return data.to_vec();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..max {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut pick = idx[..max].to_vec();
    pick.sort_unstable();
    let mut out = Vec::with_capacity(max * d);
    for i in pick {
        out.extend_from_slice(&data[i * d..(i + 1) * d]);
    }
    out
}
