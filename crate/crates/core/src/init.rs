//! Seeded tensor construction: test inputs and weight initialization.
//!
//! All randomness in the crate flows through `ChaCha8` so that a seed fixes
//! every downstream bit. `rand`'s `StdRng` is explicitly not used — its
//! algorithm may change between releases, ChaCha will not.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tensor};

/// Derives an independent stream for item `index` of a run seeded with
/// `seed`. SplitMix64 finalizer; consecutive indices give uncorrelated seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<E: Scalar>(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    Tensor::from_fn(shape, |_| E::from_f64(rng.random_range(lo..hi)))
}

pub fn normal<E: Scalar>(shape: impl Into<Vec<usize>>, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let dist = Normal::new(mean, std).expect("std must be finite and positive");
    Tensor::from_fn(shape, |_| E::from_f64(dist.sample(rng)))
}

/// He initialization for a conv weight of shape `[c_out, c_in, kh, kw]`:
/// zero-mean normal with std `sqrt(2 / fan_in)`, fan_in = `c_in·kh·kw`.
pub fn he_conv<E: Scalar>(
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<E> {
    let fan_in = (c_in * kh * kw) as f64;
    normal([c_out, c_in, kh, kw], 0.0, (2.0 / fan_in).sqrt(), rng)
}
