//! Seeded random streams.
//!
//! Every source of randomness in a run is a ChaCha8 generator derived from the
//! run seed plus a stream label, so adding or removing one consumer never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Plain generator for `seed`.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for `seed` on an independent ChaCha stream.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Folds `parts` into a single 64-bit seed (splitmix64 finaliser per part).
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        acc ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        acc = acc.wrapping_add(acc << 6).wrapping_add(acc >> 2);
        let mut z = acc.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        acc = z ^ (z >> 31);
    }
    acc
}
