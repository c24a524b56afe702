//! Seed derivation and deterministic sampling.
//!
//! Every random draw in the crate flows through a counter-based generator
//! seeded from a root seed and a purpose tag, so independent pipeline stages
//! never share or perturb each other's streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325_u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives an independent sub-seed from a root seed and a purpose tag.
pub fn sub_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a(tag.as_bytes()))
}

/// Counter-based generator for a (root seed, purpose) pair.
pub fn rng_for(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, tag))
}

/// Standard normal draw via Box-Muller on open-interval uniforms.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
