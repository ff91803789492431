//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream keyed by a base seed plus integer tags, so independent
//! consumers never share state and runs replay exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |h, &t| splitmix(h ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

// stream tags
pub const TAG_SCENARIO: u64 = 1;
pub const TAG_DETECTIONS: u64 = 2;
pub const TAG_APPEARANCE: u64 = 3;
pub const TAG_IDENTITY: u64 = 4;
pub const TAG_PAIRS: u64 = 5;
pub const TAG_INIT: u64 = 6;
pub const TAG_BATCH: u64 = 7;
pub const TAG_DROPOUT: u64 = 8;
pub const TAG_FRAMES: u64 = 9;
pub const TAG_GHOST: u64 = 10;
pub const TAG_EVAL: u64 = 11;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_replay_and_separate() {
        let a: u64 = stream(1, &[2, 3]).random();
        let b: u64 = stream(1, &[2, 3]).random();
        let c: u64 = stream(1, &[3, 2]).random();
        let d: u64 = stream(2, &[2, 3]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
