//! Deterministic seed derivation.
//!
//! One global seed drives every randomized stage. Each stage derives its own
//! seed as `splitmix64(global ^ fnv1a(stage_tag))`, so adding a stage never
//! shifts the streams of existing ones, and no stage ever consumes OS entropy.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags used by the pipeline. Free-form tags are allowed in tests;
/// these constants document the streams a full run consumes.
pub mod stage {
    pub const SYSTEM: &str = "system";
    pub const OBSERVE: &str = "observe";
    pub const RESERVOIR: &str = "reservoir";
    pub const TRAIN: &str = "train";
    pub const USP_GATE: &str = "usp-gate";
    pub const SI_GATE: &str = "si-gate";
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Finalizer from the splitmix64 generator; full-period bijective mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed for a named stage from the global seed.
pub fn stage_seed(global_seed: u64, tag: &str) -> u64 {
    splitmix64(global_seed ^ fnv1a(tag.as_bytes()))
}

/// RNG for a named stage. ChaCha8 keeps streams reproducible across platforms.
pub fn stage_rng(global_seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(global_seed, tag))
}

/// RNG directly from an explicit (already derived) seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
