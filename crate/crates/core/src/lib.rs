//! Photon-counting statistics of multimode twin beams: joint and marginal count
//! distributions, heralded conditional states, their non-Gaussianity, Monte Carlo
//! sampling of detector records and parameter estimation from them.
//!
//! NaN-rejecting comparisons are written as `!(x > y)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod combinatorics;
pub mod conditioner;
pub mod counting;
pub mod distribution;
pub mod error;
pub mod figures;
pub mod inference;
pub mod io;
pub mod nongauss;
pub mod oracle;
pub mod params;
pub mod sampler;

pub use error::{Error, Result};
pub use params::ExperimentParams;
