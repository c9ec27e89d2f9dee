//! Splittable seeding.
//!
//! Every random object in the crate is drawn from a ChaCha8 stream keyed by a
//! 64-bit seed derived with [`mix`]. Worker `k` in round `t` of a run with
//! master seed `s` always sees the same stream, no matter how the pool
//! schedules it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `(round, worker)` under `master`.
///
/// Worker index 0 is reserved for the server.
pub fn mix(master: u64, round: u64, worker: u64) -> u64 {
    let a = splitmix64(master ^ 0x5EED_0F_5EED);
    let b = splitmix64(a ^ round.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ worker.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
