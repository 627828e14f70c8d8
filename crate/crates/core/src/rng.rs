//! Seeded random streams.
//!
//! All randomness flows from a single 64-bit master seed. Independent streams
//! are derived by hashing the seed together with a label, so adding a new
//! consumer never shifts the draws of an existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type FlowRng = ChaCha8Rng;

/// Stream derived from `(seed, label)` by SHA-256.
pub fn stream(seed: u64, label: &str) -> FlowRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stream `index` within a labelled family, e.g. one per sweep cell.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> FlowRng {
    stream(seed, &format!("{label}#{index}"))
}

pub fn from_seed(seed: u64) -> FlowRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| standard_normal(rng)).collect()
}

/// Uniform direction on the unit sphere in `R^d`.
pub fn unit_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = standard_normal_vec(rng, d);
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
