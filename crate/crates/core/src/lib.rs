//! Solvers for infinite-horizon Markovian BSDEs based on a randomized-time
//! fixed-point representation of `(u, ∇u σ)`.
//!
//! The crate provides Monte Carlo Picard iterations on a space grid, two
//! neural-network schemes, and the contraction-constant analysis that
//! governs the choice of the scheme parameters.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod analysis;
pub mod error;
pub mod fixedpoint;
pub mod grid;
pub mod model;
pub mod neural;
pub mod nn_schemes;
pub mod picard_grid;
pub mod simulate;

pub use error::{Error, Result};
