//! Named, replayable random streams derived from one root seed.
//!
//! Every stochastic subsystem (instance generation, rollout sampling, tour
//! traversal, selection seeding) draws from its own stream, keyed by a tag
//! and an index. Streams are independent of thread scheduling: the seed is a
//! pure function of `(root, tag, index)`, so concurrent pipelines reproduce
//! the exact sequences of a serial run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a child seed from a root seed, a stream tag, and an index.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mixed = splitmix64(root ^ fnv1a(tag));
    splitmix64(mixed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A ChaCha stream for `(root, tag, index)`.
pub fn stream(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, index))
}
