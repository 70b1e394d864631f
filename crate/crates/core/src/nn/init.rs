//! Seeded parameter initialization.
//!
//! Weight matrices use uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
//! biases start at zero, latent arrays and embedding tables use normal(0,
//! 0.02). Each parameter derives its own RNG stream from (seed, name), so
//! initialization does not depend on construction order.

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use crate::util::derive_seed;

pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

pub fn xavier_uniform<E: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    name: &str,
) -> Tensor<E> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = rand::distributions::Uniform::new_inclusive(-a, a);
    let mut rng = param_rng(seed, name);
    Tensor::from_fn(shape, |_| E::from_f64(dist.sample(&mut rng)))
}

pub fn normal<E: Scalar>(shape: Vec<usize>, std: f64, seed: u64, name: &str) -> Tensor<E> {
    let dist = rand_distr::Normal::new(0.0, std).expect("std must be positive");
    let mut rng = param_rng(seed, name);
    Tensor::from_fn(shape, |_| E::from_f64(dist.sample(&mut rng)))
}

pub fn zeros<E: Scalar>(shape: Vec<usize>) -> Tensor<E> {
    Tensor::zeros(shape)
}
