//! Numerical laboratory for quasi-stationary distributions of diffusions
//! absorbed at the boundary of an interval (or a product of intervals).
//!
//! The pipeline: pick a [`potential::PotentialSpec`] and a
//! [`grid_measure::Grid1D`], assemble the generator
//! ([`spectral::assemble_generator`]), compute `(λ₀, η)` and the gap,
//! evolve conditioned laws directly or through the Doob transform
//! ([`doob`]), and compare the observed decay with the certified rates
//! ([`analytics`]). [`montecarlo`] cross-checks everything with particles.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod doob;
mod error;
mod fit;
pub mod grid_measure;
pub mod io;
mod linalg;
pub mod montecarlo;
pub mod potential;
pub mod spectral;

pub use error::{Error, Result};
pub use grid_measure::{Grid1D, GridMeasure, ProductGridMeasure};
pub use potential::PotentialSpec;
pub use spectral::{EigenPair, TridiagonalOperator};
