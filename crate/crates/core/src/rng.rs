//! Named, counter-addressed random streams.
//!
//! Every random draw in the crate comes from a stream identified by
//! `(seed, tag, indices...)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive a 64-bit key from a seed, a stream tag and a list of counters.
pub fn stream_key(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ fnv1a(tag));
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// Generator for the stream `(seed, tag, indices...)`.
pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, tag, indices))
}

/// Fill `out` with independent standard normal draws.
pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(3, "sample", &[1, 2]).random();
        let b: u64 = stream(3, "sample", &[1, 2]).random();
        let c: u64 = stream(3, "sample", &[2, 1]).random();
        let d: u64 = stream(3, "init", &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
