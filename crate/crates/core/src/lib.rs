//! Scattering-center extraction from complex SAR data.
//!
//! A radar geometry determines a dictionary whose columns are the responses
//! of unit point scatterers on a spatial grid. Sparse codes over that
//! dictionary locate and weight the scatterers; they are recovered with ISTA,
//! a trainable unfolded ISTA, OMP or AMP.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
