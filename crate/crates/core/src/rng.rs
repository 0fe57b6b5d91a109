//! Seeded random streams.
//!
//! Everything random in the crate draws from SplitMix64, a 64-bit-state
//! generator whose output sequence is fixed by its algorithm, so a seed means
//! the same thing on every platform.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Independent stream `stream` derived from a master seed.
pub fn substream(seed: u64, stream: u64) -> SplitMix64 {
    // Golden-ratio increment decorrelates neighbouring stream ids.
    SplitMix64::seed_from_u64(seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = seeded(42);
                move |_| r.next_u64()
            })
            .collect();
        let mut r = seeded(42);
        assert_eq!(a, (0..4).map(|_| r.next_u64()).collect::<Vec<_>>());
        assert_ne!(substream(42, 0).next_u64(), substream(42, 1).next_u64());
    }
}
