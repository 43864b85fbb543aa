//! Seeded random streams.
//!
//! Every stochastic step draws from PCG-64 (`rand_pcg::Pcg64`, the
//! XSL-RR 128/64 generator), which is value-stable across platforms. Distinct
//! consumers of the same run seed use distinct stream tags so that adding a
//! draw in one place never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

/// Stream tags for the independent consumers of a run seed.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const KMEANS: u64 = 5;
    pub const GRADCHECK: u64 = 6;
    pub const ANALYSIS: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator for `seed` on the given stream.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    Pcg64::seed_from_u64(splitmix64(seed) ^ splitmix64(stream.wrapping_mul(0xA24B_AED4_963E_E407)))
}

/// Derives a child seed, e.g. one k-means run per (epoch, class).
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p.wrapping_add(0x632B_E59B_D9B4_E019)))
}
