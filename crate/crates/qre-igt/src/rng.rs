//! Seed-stream derivation and the sampling transforms used by the generators.
//!
//! Every random quantity in the crate is drawn from a [`Stream`] derived from a
//! master seed, a scope label, and optional indices (trial number, state index,
//! grid position). Distinct `(scope, indices)` tuples give independent streams,
//! so adding a grid point or reordering trials never perturbs other draws.
//!
//! The transforms are fixed so results replicate across platforms:
//! - stream derivation: SHA-256 over the length-prefixed `(seed, scope, indices)`
//!   encoding, feeding a ChaCha8 stream cipher;
//! - standard normal: Marsaglia's polar method, one variate per accepted pair
//!   (the second variate of the pair is discarded);
//! - unit exponential: inverse CDF, `-ln(1 - u)`;
//! - Dirichlet(1, …, 1): normalized independent unit exponentials;
//! - categorical: inverse CDF walk over the cumulative weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Derives an independent stream for `(master_seed, scope, indices)`.
pub fn stream(master_seed: u64, scope: &str, indices: &[u64]) -> Stream {
    ChaCha8Rng::from_seed(digest(master_seed, scope, indices))
}

/// Collapses `(master_seed, scope, indices)` into a derived 64-bit seed, for
/// handing a whole sub-pipeline (e.g. one trial) its own master seed.
pub fn subseed(master_seed: u64, scope: &str, indices: &[u64]) -> u64 {
    let bytes = digest(master_seed, scope, indices);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

fn digest(master_seed: u64, scope: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((scope.len() as u64).to_le_bytes());
    hasher.update(scope.as_bytes());
    hasher.update((indices.len() as u64).to_le_bytes());
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Standard normal draw via the polar method.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Unit exponential draw via the inverse CDF.
pub fn unit_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

/// Draw from Dirichlet(1, …, 1) over `k` categories.
pub fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    assert!(k >= 1, "dirichlet_ones requires k >= 1");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| unit_exponential(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Draw an index from the categorical distribution given by `probs`.
///
/// `probs` must be a probability vector; rounding in the cumulative sum is
/// absorbed by clamping to the last index.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    debug_assert!(!probs.is_empty());
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
