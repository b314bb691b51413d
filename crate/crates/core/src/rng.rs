//! Domain-separated deterministic RNG streams.
//!
//! Every random decision in a run draws from a ChaCha8 stream keyed by
//! (seed, domain, a, b). Streams never share state, so the order in which
//! clients execute within a round cannot change any draw. This is what makes
//! results independent of worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each domain owns one kind of decision.
pub mod domain {
    /// Synthetic dataset generation, keyed (class, 0).
    pub const DATASET: u64 = 1;
    /// Dirichlet partitioning, keyed (attempt, 0).
    pub const PARTITION: u64 = 2;
    /// Model initialization at round 0.
    pub const INIT: u64 = 3;
    /// Per-round client sampling, keyed (round, 0).
    pub const SERVER: u64 = 4;
    /// Persistent per-client stream (batch order, poison selection, noise),
    /// keyed (client_id, 0).
    pub const CLIENT: u64 = 5;
    /// Partner selection for the meta attack, keyed (round, client_id).
    pub const PARTNER: u64 = 6;
    /// Meta-test batch draws from the partner's shared pool, keyed
    /// (client_id, round).
    pub const META: u64 = 7;
    /// Shared-pool subset selection at run start, keyed (client_id, 0).
    pub const SHARE: u64 = 8;
    /// Post-hoc tuning defenses, keyed (client_id, purpose).
    pub const TUNE: u64 = 9;
    /// Random choice of malicious client ids when not pinned in the config.
    pub const MALSEL: u64 = 10;
}

/// Derives an independent ChaCha8 stream from a seed and a three-part key.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
