//! Deterministic seed derivation. Every random stream in a run (weight
//! init, exploration, replay sampling, episode resets, demo generation) is
//! keyed by (run seed, stream tag, index), so no consumer can perturb
//! another and thread partitioning cannot change outcomes.

pub const INIT: u64 = 1;
pub const EXPLORE: u64 = 2;
pub const SAMPLE: u64 = 3;
pub const TRAIN_EPISODE: u64 = 4;
pub const EVAL_EPISODE: u64 = 5;
pub const DEMO_EPISODE: u64 = 6;
pub const DEMO_NOISE: u64 = 7;
pub const RTG: u64 = 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ (stream << 48)) ^ index)
}
