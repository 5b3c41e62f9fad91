//! Seeding policy: one master seed fans out to independent streams.
//!
//! Every consumer of randomness (dataset sampling, parameter init, data
//! order, noise, evaluation) derives its own ChaCha stream from
//! `(master, stream tag, counter)` so components stay independently
//! reproducible and a resumed epoch replays the same draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream tags. Fixed numbering is part of the reproducibility contract.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const INIT_TEXT: u64 = 2;
    pub const INIT_IMAGE: u64 = 3;
    pub const INIT_GEN: u64 = 4;
    pub const INIT_DISC: u64 = 5;
    pub const DATA_ORDER: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const EVAL: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a master seed, a stream tag, and a counter.
pub fn child_seed(master: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ counter)
}

/// ChaCha generator for one derived stream.
pub fn stream_rng(master: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, stream, counter))
}

/// Standard-normal draw via Box-Muller. Bit-stable across platforms for a
/// given generator state.
pub fn randn<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0, 1] so ln is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
