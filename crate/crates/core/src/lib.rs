//! Stable model distillation.
//!
//! A black-box teacher labels synthetic corpora; interpretable students
//! (CART trees, falling rule lists, symbolic-regression formulas) are fit to
//! them, grouped into equivalence classes by structure, and compared through
//! a CLT-based loss-gap test. When the test cannot separate the best class
//! from its competitors, the corpus size is grown until it can, or until a
//! configured cap is hit.
//!
//! The crate is `no_std` + `alloc`. Enable `std` for `std::error::Error`
//! impls, `parallel` for rayon-backed candidate generation and `serde` for
//! model (de)serialization.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
mod math;

pub mod cart;
pub mod data;
pub mod forest;
pub mod frl;
pub mod rng;
pub mod sampler;
pub mod sr;
pub mod stability;
pub mod stats;
pub mod student;
pub mod theory;

pub use error::{Error, Result};

/// Probabilities fed to the cross-entropy loss are clamped to `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// Clamp a probability into `[PROB_EPS, 1 - PROB_EPS]`. NaN passes through.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    if p < PROB_EPS {
        PROB_EPS
    } else if p > 1.0 - PROB_EPS {
        1.0 - PROB_EPS
    } else {
        p
    }
}

/// `(0..count).map(f)`, run on the rayon pool when `parallel` is enabled.
/// Output order is index order either way.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> alloc::vec::Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> alloc::vec::Vec<T> {
    (0..count).map(f).collect()
}
