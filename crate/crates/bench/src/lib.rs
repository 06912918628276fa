//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use splitgp_core::faer::Mat;
use splitgp_core::AtomicMeasure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n × q` standard normal exposures.
pub fn exposures(n: usize, q: usize, seed: u64) -> Mat<f64> {
    let mut r = rng(seed);
    Mat::from_fn(n, q, |_, _| r.sample(StandardNormal))
}

/// Uniform measure on `n` standard normal points in `dim` dimensions, shifted by `shift`.
pub fn gaussian_measure(n: usize, dim: usize, shift: f64, seed: u64) -> AtomicMeasure {
    let mut r = rng(seed);
    let points = (0..n * dim).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect();
    AtomicMeasure::uniform(points, dim).expect("valid measure")
}
