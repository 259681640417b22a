//! Seed derivation. Every randomised step draws from its own stream derived
//! from the run seed, a purpose tag and an entity id, so results do not depend
//! on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(seed: u64, tag: &str, id: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(tag)) ^ splitmix64(id.wrapping_add(0x5851_f42d)))
}

pub fn stream(seed: u64, tag: &str, id: u64) -> StdRng {
    StdRng::seed_from_u64(derive_seed(seed, tag, id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, "a", 2), derive_seed(1, "a", 2));
        assert_ne!(derive_seed(1, "a", 2), derive_seed(1, "a", 3));
        assert_ne!(derive_seed(1, "a", 2), derive_seed(1, "b", 2));
        assert_ne!(derive_seed(1, "a", 2), derive_seed(2, "a", 2));
    }
}
