//! Seeded random streams.
//!
//! Every stochastic choice draws from a stream derived from the run seed, a
//! purpose tag and optional indices, so components are reproducible
//! independently of each other and of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit key for `(seed, tag, indices)`.
pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut key = splitmix64(seed ^ splitmix64(h));
    for &i in indices {
        key = splitmix64(key ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    key
}

pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, indices))
}
