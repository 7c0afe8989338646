//! Dyadic matrix-weighted square functions, matrix `A₂`/`A∞` characteristics
//! and a verified stopping-time sparse domination.
//!
//! Everything lives on the dyadic grid of `[0, 1)` at a fixed depth `N`:
//! functions are constant on the `2^N` leaf cells and Haar intervals are the
//! dyadic intervals of length at least `2^{1-N}`.

pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod io;
pub mod matrix;
mod par;
pub mod sparse;
pub mod square;
pub mod weights;

pub use dyadic::{DyadicInterval, GridMatrixField, GridScalar, GridVector};
pub use error::{Error, Result};
pub use matrix::{Matrix, SymMatrix};
pub use weights::{MatrixWeight, WeightFamilySpec, WeightKind};

/// Whether this build runs on the rayon pool.
pub const PARALLEL: bool = par::is_parallel();
