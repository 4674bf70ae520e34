//! Monte Carlo plumbing: reproducible RNG streams and batch-means error
//! estimation.
//!
//! Every MC loop splits its sample budget over a fixed number of batches,
//! one ChaCha stream per batch. Batches run in parallel but are reduced in
//! batch order, so results depend only on the seed, not on thread count or
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Number of batches used for batch-means standard errors.
pub const N_BATCHES: usize = 100;

/// An MC estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// |value - other| measured in combined standard errors.
    pub fn sigmas_from(&self, other: f64) -> f64 {
        (self.value - other).abs() / self.stderr.max(f64::MIN_POSITIVE)
    }
}

/// Derives an independent substream from a master seed. Streams with
/// different labels or indices never collide (ChaCha stream separation).
pub fn stream_rng(master_seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ splitmix(label_hash(label)));
    rng.set_stream(index.into());
    rng
}

fn label_hash(label: &str) -> u64 {
    let mut h = 1469598103934665603u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Batch-means estimate of `E f` over `n_samples` draws.
///
/// `f` receives the batch RNG and returns one sample of the quantity.
pub fn mc_mean<F>(n_samples: usize, master_seed: u64, label: &str, f: F) -> McEstimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let means = batch_means(n_samples, master_seed, label, |rng, m| {
        let mut acc = 0.0;
        for _ in 0..m {
            acc += f(rng);
        }
        vec![acc / m as f64]
    });
    combine(&means, 0)
}

/// Batch-means estimates of a vector of quantities computed in one pass.
///
/// `f` must fill one batch of size `m`, returning the vector of batch
/// means; all batches must return the same length.
pub fn mc_mean_vec<F>(
    n_samples: usize,
    master_seed: u64,
    label: &str,
    f: F,
) -> Vec<McEstimate>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Vec<f64> + Sync,
{
    let means = batch_means(n_samples, master_seed, label, f);
    let width = means[0].len();
    (0..width).map(|j| combine(&means, j)).collect()
}

fn batch_means<F>(
    n_samples: usize,
    master_seed: u64,
    label: &str,
    f: F,
) -> Vec<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Vec<f64> + Sync,
{
    assert!(n_samples >= N_BATCHES, "need at least one sample per batch");
    let base = n_samples / N_BATCHES;
    let extra = n_samples % N_BATCHES;
    (0..N_BATCHES)
        .into_par_iter()
        .map(|b| {
            let m = base + usize::from(b < extra);
            let mut rng = stream_rng(master_seed, label, b as u64);
            f(&mut rng, m)
        })
        .collect()
}

fn combine(means: &[Vec<f64>], j: usize) -> McEstimate {
    let b = means.len() as f64;
    let mean = means.iter().map(|v| v[j]).sum::<f64>() / b;
    let var = means.iter().map(|v| (v[j] - mean) * (v[j] - mean)).sum::<f64>() / (b - 1.0);
    McEstimate { value: mean, stderr: (var / b).sqrt() }
}
