//! Small shared helpers: deterministic hashing and seed derivation.

use fnv::FnvHasher;
use std::hash::Hasher;

/// FNV-1a hash of a byte slice, used for config digests and trajectory checksums.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// FNV-1a hash of a float slice via the IEEE-754 bit patterns.
pub fn fnv64_f64(values: &[f64]) -> u64 {
    let mut h = FnvHasher::default();
    for v in values {
        h.write(&v.to_bits().to_le_bytes());
    }
    h.finish()
}

/// SplitMix64 step, used to derive independent RNG seeds from a master seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream (iteration, block) of a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Number of grid points covering `[0, horizon)` at spacing `dt`.
///
/// Uses a relative epsilon so that horizons that are exact multiples of `dt`
/// in decimal (500 / 0.001) are not truncated by binary rounding.
pub fn grid_points(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) * (1.0 + 1e-12) + 1e-9).floor() as usize
}
