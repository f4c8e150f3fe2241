//! Counter-style stream derivation: every (replication, site, purpose) triple
//! gets its own ChaCha stream under a key derived from the master seed, so
//! results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    /// Generating a site's pool.
    PoolData = 1,
    /// Random choices inside the sequential procedure.
    Recruitment = 2,
    /// Anything else a harness needs (shuffles, Monte Carlo integrals).
    Auxiliary = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_from_seed(master: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = master;
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Independent stream for `(rep, site, purpose)`. Replications up to 2⁴⁰
/// and sites up to 2²⁰ map to distinct stream ids.
pub fn stream_rng(master: u64, rep: u64, site: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    debug_assert!(rep < 1 << 40 && site < 1 << 20);
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(master));
    rng.set_stream((rep << 24) | (site << 4) | purpose as u64);
    rng
}
