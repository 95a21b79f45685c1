//! Deterministic seed derivation. Every random draw in a run is keyed by a
//! path such as `(run seed, step, prompt, purpose, member)`, so streams never
//! depend on scheduling or on which other draws happened.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Purpose tags used as the first path element after the step index.
pub mod purpose {
    pub const INSTANCE: u64 = 1;
    pub const GENERATION: u64 = 2;
    pub const REFINEMENT: u64 = 3;
    pub const AGGREGATE: u64 = 4;
    pub const INJECT: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const INIT: u64 = 7;
}
