//! Random number plumbing: a fast engine, splittable per-replicate
//! seeding, and the two variate shapes the simulator needs.
//!
//! Every replicate derives its own seed from a master seed and its index,
//! so parallel runs never share a stream and a run is reproduced by
//! (master seed, index) alone.

use rand_core::{RngCore, SeedableRng};

use crate::math;

/// The engine used throughout: fast, 256-bit state, and equidistributed
/// far beyond what the longest runs here consume.
pub type SimRng = rand_xoshiro::Xoshiro256PlusPlus;

/// Finalizer of the splitmix64 generator: a bijective mixer on `u64`.
#[inline]
fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for replicate `index` from a master seed.
///
/// Distinct `(master, index)` pairs with the same master yield distinct
/// seeds: the map is `mix(master + (index+1)*C)` with `mix` bijective and
/// `C` odd, so for fixed master it is injective in `index`.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    splitmix64_mix(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Build the engine for replicate `index` of a run with the given master seed.
pub fn replicate_rng(master: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, index))
}

/// Uniform draw in `[0, 1)` with 53 random bits.
#[inline(always)]
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential waiting time with the given rate.
///
/// Uses `-ln(1 - U) / rate` with `U` in `[0, 1)`, so the result is finite
/// and strictly positive. Requires `rate > 0`.
#[inline(always)]
pub fn exponential<R: RngCore>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0, "exponential waiting time needs a positive rate");
    -math::ln_1p(-uniform(rng)) / rate
}
