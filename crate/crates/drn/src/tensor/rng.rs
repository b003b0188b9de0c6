//! Deterministic RNG streams. Every random decision in the crate pulls from
//! a stream derived from (seed, salt), so run N and run N' with the same
//! seed agree bit for bit regardless of consumption order elsewhere.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{Scalar, Shape, Tensor};

/// Weyl increment used by splitmix64; spreads small salts across the u64 range.
const SALT_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// An independent generator for stream `salt` of master `seed`.
/// `seed_from_u64` runs the state through splitmix64, so even adjacent
/// (seed, salt) pairs produce uncorrelated streams.
pub fn stream_rng(seed: u64, salt: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed ^ salt.wrapping_mul(SALT_MIX))
}

/// Kaiming-normal init for a conv weight: N(0, sqrt(2 / fan_in)) with
/// fan_in = C_in * kH * kW. Draws in f64, then narrows to T.
pub fn kaiming_conv_weight<T: Scalar>(shape: Shape, rng: &mut impl Rng) -> Tensor<T> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let std = (2.0 / fan_in).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let data: Vec<T> = (0..shape.len())
        .map(|_| T::of(normal.sample(rng)))
        .collect();
    Tensor::output(data, shape, true)
}
