//! Seed derivation and the chunked standard-normal stream shared by every
//! Monte Carlo estimator.
//!
//! Row `r` of a stream lives in chunk `r / CHUNK_ROWS`; each chunk owns an
//! independent generator seeded from `(seed, chunk index)`. Estimates reduce
//! chunk statistics in chunk order, so results do not depend on how many
//! threads evaluated the chunks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub const CHUNK_ROWS: usize = 1 << 14;

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.96;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable labeled sub-seed. The same `(seed, label, index)` always maps to
/// the same value across platforms and releases.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(seed ^ h) ^ splitmix64(index))
}

pub fn rng_for(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    rng_for(seed, "normal-chunk", chunk as u64)
}

/// Running mean and centered second moment.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64) * (other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Normal-approximation 95% half-width of the mean.
    pub fn half_width(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        Z95 * (self.variance() / self.count as f64).sqrt()
    }
}

fn chunk_bounds(rows: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let chunks = rows.div_ceil(CHUNK_ROWS);
    (0..chunks)
        .into_par_iter()
        .map(move |c| (c, (rows - c * CHUNK_ROWS).min(CHUNK_ROWS)))
}

/// Mean of `f(z)` over `rows` standard-normal vectors of length `dim`,
/// streamed without materializing the sample matrix.
pub fn stream_moments<F>(seed: u64, rows: usize, dim: usize, f: F) -> Moments
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    stream_moments_with(seed, rows, dim, || (), |z, _| f(z))
}

/// [`stream_moments`] with a per-chunk scratch value built by `init`.
pub fn stream_moments_with<S, I, F>(seed: u64, rows: usize, dim: usize, init: I, f: F) -> Moments
where
    I: Fn() -> S + Sync,
    F: Fn(&[f64], &mut S) -> f64 + Sync,
{
    let parts: Vec<Moments> = chunk_bounds(rows)
        .map(|(c, len)| {
            let mut rng = chunk_rng(seed, c);
            let mut z = vec![0.0; dim];
            let mut scratch = init();
            let mut m = Moments::default();
            for _ in 0..len {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                m.push(f(&z, &mut scratch));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

/// A materialized sample matrix, bit-identical to what [`stream_moments`]
/// draws for the same `(seed, rows, dim)`. Used for common-random-number
/// comparisons across many candidate allocations.
#[derive(Debug, Clone)]
pub struct NormalBank {
    rows: usize,
    dim: usize,
    chunks: Vec<Vec<f64>>,
}

impl NormalBank {
    pub fn generate(seed: u64, rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "sample rows need at least one coordinate");
        let chunks = chunk_bounds(rows)
            .map(|(c, len)| {
                let mut rng = chunk_rng(seed, c);
                (0..len * dim).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect();
        NormalBank { rows, dim, chunks }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn moments<F>(&self, f: F) -> Moments
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.moments_with(|| (), |z, _| f(z))
    }

    pub fn moments_with<S, I, F>(&self, init: I, f: F) -> Moments
    where
        I: Fn() -> S + Sync,
        F: Fn(&[f64], &mut S) -> f64 + Sync,
    {
        let dim = self.dim;
        let parts: Vec<Moments> = self
            .chunks
            .par_iter()
            .map(|chunk| {
                let mut scratch = init();
                let mut m = Moments::default();
                for row in chunk.chunks_exact(dim) {
                    m.push(f(row, &mut scratch));
                }
                m
            })
            .collect();
        parts.into_iter().fold(Moments::default(), Moments::merge)
    }
}
