//! Deterministic seed derivation.
//!
//! Every random stream is keyed by `(base seed, stream tag, index)` and mixed
//! through splitmix64, so a realization's draws do not depend on which worker
//! produced it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each names an independent family of random draws.
pub mod stream {
    pub const PILOTS: u64 = 1;
    pub const SENSORS: u64 = 2;
    pub const SHADOWING: u64 = 3;
    pub const COLLOCATED_SHADOWING: u64 = 4;
    pub const MC_HARVEST: u64 = 5;
    pub const MC_SINR: u64 = 6;
    pub const MC_COVARIANCE: u64 = 7;
    pub const LARGE_SCALE_DRAW: u64 = 8;
    pub const TRIPLES: u64 = 9;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix(splitmix(base ^ stream) ^ index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub fn rng_for(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
