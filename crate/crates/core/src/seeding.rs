//! Derivation of independent RNG streams from a base seed.

/// SplitMix64 mix of a base seed and a stream index. Streams derived from
/// distinct indices are effectively independent, which keeps per-example and
/// per-run generation order-free and parallel-safe.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two-level derivation for (run, item) style streams.
pub fn derive_seed2(base: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(base, a), b)
}
