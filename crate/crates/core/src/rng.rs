//! Seeded pseudo-random numbers.
//!
//! Every random draw in the library goes through [`Prng`], which is
//! xoshiro256** seeded by expanding a 64-bit seed with SplitMix64:
//!
//! ```text
//! splitmix64:  z ← (s += 0x9e3779b97f4a7c15)
//!              z ← (z ^ (z >> 30)) · 0xbf58476d1ce4e5b9
//!              z ← (z ^ (z >> 27)) · 0x94d049bb133111eb
//!              out = z ^ (z >> 31)
//!
//! xoshiro256**: out = rotl(s1 · 5, 7) · 9
//!               t = s1 << 17
//!               s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//!               s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Uniform doubles take the top 53 bits of a draw. Streams for separate
//! purposes are derived with [`derive_seed`] so they never overlap by
//! accident.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Prng = Xoshiro256StarStar;

pub fn prng(seed: u64) -> Prng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label and index into an independent seed.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for b in stream.bytes().chain(index.to_le_bytes()) {
        h = splitmix(h ^ u64::from(b));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fisher-Yates shuffle driven by `rng`.
pub fn shuffle<T>(items: &mut [T], rng: &mut Prng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
