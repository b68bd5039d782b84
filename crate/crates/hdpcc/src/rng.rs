//! Deterministic random streams keyed by logical draw identity.
//!
//! Every random variate in the sampler is drawn from a stream derived from
//! `(master seed, stream key)`, never from worker-sequential state. Two runs
//! with the same seed produce bit-identical chains regardless of how triplets
//! are distributed over workers, and a restored snapshot resumes the exact
//! streams because keys embed the sweep counter.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logical identity of one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKey {
    /// Initialization of state (imputed alleles, starting labels).
    Init,
    /// All draws made while updating one triplet (i, j, k) in one sweep.
    Triplet { sweep: u64, k: u8, i: u32, j: u32 },
    /// Generation of entry `pos` of the per-k H-level stick-breaking cache.
    HCacheEntry { sweep: u64, k: u8, pos: u64 },
    /// Generation of entry `pos` of the per-(j,k) G0-level cache.
    G0CacheEntry { sweep: u64, k: u8, j: u32, pos: u64 },
    /// Coordinator hyperparameter block update.
    Tmcmc { sweep: u64 },
    /// Replicate draws for the gene-gene interaction covariance.
    CovReplicate {
        sweep: u64,
        k: u8,
        i: u32,
        j1: u32,
        j2: u32,
        rep: u32,
    },
    /// Synthetic data generation.
    Simgen { part: u32 },
}

impl StreamKey {
    fn words(&self) -> [u64; 6] {
        match *self {
            StreamKey::Init => [1, 0, 0, 0, 0, 0],
            StreamKey::Triplet { sweep, k, i, j } => [2, sweep, k as u64, i as u64, j as u64, 0],
            StreamKey::HCacheEntry { sweep, k, pos } => [3, sweep, k as u64, pos, 0, 0],
            StreamKey::G0CacheEntry { sweep, k, j, pos } => [4, sweep, k as u64, j as u64, pos, 0],
            StreamKey::Tmcmc { sweep } => [5, sweep, 0, 0, 0, 0],
            StreamKey::CovReplicate {
                sweep,
                k,
                i,
                j1,
                j2,
                rep,
            } => [
                6,
                sweep,
                k as u64,
                (i as u64) << 32 | rep as u64,
                j1 as u64,
                j2 as u64,
            ],
            StreamKey::Simgen { part } => [7, part as u64, 0, 0, 0, 0],
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the ChaCha stream for `(seed, key)`.
pub fn stream(seed: u64, key: StreamKey) -> ChaCha8Rng {
    let mut acc = seed ^ 0x6a09e667f3bcc908;
    for w in key.words() {
        // absorb each word through the mixer so distinct keys decorrelate
        acc ^= splitmix64(&mut acc).wrapping_add(w).rotate_left(17);
        acc = splitmix64(&mut acc);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut acc).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
