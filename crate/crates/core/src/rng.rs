//! Seed derivation for deterministic, schedule-independent sampling.
//!
//! Every random consumer gets its own ChaCha12 stream derived from a master
//! seed and a stream label, so parallel fan-out (screens of an ensemble, scan
//! points of a count map) produces identical results regardless of thread
//! count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; good avalanche, cheap, stable.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a master seed and a stream label.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0x51ed_270b)))
}

/// Derive a child seed with two labels (stream + element index).
pub fn derive_seed2(master: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(master, stream), index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Stream labels used by the scenario pipeline (recorded in manifests).
pub mod streams {
    pub const SCREEN: u64 = 1;
    pub const OPTIMIZER: u64 = 2;
    pub const SCAN: u64 = 3;
    pub const CAMERA: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const ENSEMBLE: u64 = 6;
    pub const MONITOR: u64 = 7;
}
