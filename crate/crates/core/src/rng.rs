//! Seedable, splittable random streams.
//!
//! Each noise source draws from its own ChaCha stream selected by hashing a
//! source label, so adding a new source never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// FNV-1a, fixed across platforms and toolchains.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent generator for `(master seed, source label)`.
pub fn stream(master_seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Derives a child master seed, e.g. one per calibration tone.
pub fn child_seed(master_seed: u64, label: &str) -> u64 {
    use rand::RngCore;
    stream(master_seed, label).next_u64()
}
