//! Seed derivation for named RNG sub-streams.
//!
//! Every run hangs off a single user seed. Components draw from named
//! sub-streams ("dataset", "init", "shuffle", ...) so that e.g. two runs
//! that only differ in an ablation toggle still see identical datasets
//! and identical initialization.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64; stable scrambler independent of std's hasher.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for the sub-stream `name` of `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    let mixed = splitmix64(seed ^ fnv1a(name.as_bytes()));
    ChaCha12Rng::seed_from_u64(mixed)
}
