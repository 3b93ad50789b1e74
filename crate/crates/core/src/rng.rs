//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, domain, a, b)`, so results never depend on the order in which
//! parallel workers pick up tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains, kept distinct so that e.g. imputation and bootstrap
/// draws never share a key.
pub mod domain {
    pub const IMPUTATION: u64 = 1;
    pub const WILD_BOOTSTRAP: u64 = 2;
    pub const NAIVE_BOOTSTRAP: u64 = 3;
    pub const TRIAL: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a key into a 64-bit value; used to derive child seeds.
pub fn derive(seed: u64, domain: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [domain, a, b] {
        h = splitmix64(h ^ part);
    }
    h
}

/// Independent ChaCha8 stream for the key `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = derive(seed, domain, a, b);
    for chunk in key.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
