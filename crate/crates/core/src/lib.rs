//! Spectral laboratory for the periodic KdV equation driven by additive
//! space-time white noise: Fourier fields, Bourgain and Besov-type norms,
//! Brownian families and stochastic convolutions, a Picard solver for the
//! Duhamel formulation, and empirical checks of the underlying estimates.

// `!(x > 0.0)` is how parameters reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cutoff;
pub mod error;
pub mod norms;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub mod convolution;
pub mod estimates;
pub mod experiment;
pub mod noise;
pub mod solver;
pub mod stats;
