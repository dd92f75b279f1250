//! Deterministic data-parallel execution over independent Monte Carlo paths.
//!
//! Every path `i` draws from its own ChaCha8 stream `(seed, i)`, so results do
//! not depend on scheduling or on the number of worker threads. With the
//! `parallel` feature disabled, [`Execution::Parallel`] runs sequentially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// The random stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent seed for a named sub-experiment.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(0..n).map(f)` with results in index order.
pub fn map_indexed<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => par_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = path_rng(7, 0).random();
        let b: u64 = path_rng(7, 1).random();
        let c: u64 = path_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn parallel_matches_sequential() {
        let f = |i: usize| {
            let mut r = path_rng(99, i as u64);
            (0..100).map(|_| r.random::<f64>()).sum::<f64>()
        };
        assert_eq!(map_indexed(500, Execution::Sequential, f), map_indexed(500, Execution::Parallel, f));
    }

    #[test]
    fn pairwise_is_accurate() {
        let v: Vec<f64> = (0..10_000).map(|i| 0.1 + i as f64 * 1e-9).collect();
        let exact = 0.1 * 10_000.0 + 1e-9 * (9_999.0 * 10_000.0 / 2.0);
        assert!((pairwise_sum(&v) - exact).abs() < 1e-10);
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
    }
}
