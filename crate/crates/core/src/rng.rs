//! Counter-based random substreams.
//!
//! Every stochastic pipeline draws replicate `r` from its own ChaCha stream
//! keyed by `(seed, domain)` with stream id `r`. Results therefore depend only
//! on the seed and the replicate index, never on how replicates are scheduled
//! across worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// The generator handed to per-replicate work.
pub type StreamRng = ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A family of independent streams derived from one seed and a domain tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
    key: [u8; 32],
}

impl SeedStreams {
    pub fn new(seed: u64, domain: &str) -> Self {
        let mut state = seed ^ fnv1a(domain.as_bytes()).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child family, e.g. one per grid point of a sweep.
    pub fn child(&self, domain: &str, index: u64) -> Self {
        let mut state = u64::from_le_bytes(self.key[..8].try_into().unwrap())
            ^ fnv1a(domain.as_bytes())
            ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { seed: self.seed, key }
    }

    pub fn stream(&self, index: u64) -> StreamRng {
        let mut rng = ChaCha12Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

/// Degree of parallelism for replicate loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workers(usize);

impl Workers {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "workers",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self(n))
    }

    pub fn single() -> Self {
        Self(1)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Map `f` over `0..n` on a dedicated pool; output is in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.0 == 1 {
            return (0..n).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.0)
            .build()
            .expect("failed to build worker pool");
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    pub fn try_map_indexed<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map_indexed(n, f).into_iter().collect()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::single()
    }
}
