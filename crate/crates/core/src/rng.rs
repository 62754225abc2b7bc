//! Seed derivation and counter-based uniform draws.
//!
//! Everything random in the pipeline is keyed by stable integers so results
//! never depend on thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a of a string; stable across platforms and releases.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Combines two keys into one well-mixed key. Not commutative.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17))
}

/// Seed for a named entity under a base seed (`base ⊕ hash(name)`, mixed).
pub fn derive_seed(base: u64, name: &str) -> u64 {
    splitmix64(base ^ fnv1a(name))
}

/// Uniform in [0, 1) determined entirely by `(key, counter)`.
#[inline]
pub fn counter_uniform(key: u64, counter: u64) -> f64 {
    let bits = mix(key, counter);
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fisher–Yates shuffle driven by a seeded stream.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    use rand::Rng;
    let mut rng = stream(seed);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
