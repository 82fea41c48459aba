//! Multiscale Darcy flow in one dimension: forward solvers, periodic
//! homogenization with quantitative diagnostics, particle transport, and
//! inverse estimation of homogenized permeabilities, including MAP
//! estimation with the fluctuation covariance predicted by the central
//! limit correction to homogenization.

pub mod elliptic;
pub mod error;
pub mod fields;
pub mod fluctuation;
pub mod grid;
pub mod homogenization;
pub mod inference;
pub mod optimize;
pub mod rng;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
