//! Seedable, splittable random streams.
//!
//! Every stream is a ChaCha8 counter-mode generator keyed by the 64-bit seed;
//! the trial index selects the ChaCha stream id, so `stream(seed, i)` and
//! `stream(seed, j)` never overlap for `i != j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Independent stream number `index` derived from `seed`.
pub fn stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw a category from a probability row by inverse CDF.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass; take the last supported state
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// A random probability row: normalized `Exp(1)` draws (flat Dirichlet).
pub fn dirichlet_flat<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let s: f64 = draws.iter().sum();
    if s == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    draws.into_iter().map(|d| d / s).collect()
}
