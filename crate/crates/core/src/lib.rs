//! Haar system experiments on periodic dyadic grids: local-means smoothness norms,
//! dyadic averaging and partial-sum operators, extremal test functions and the
//! experiment drivers behind the `haarlab` binary.

pub mod cli;
pub mod config;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod generators;
pub mod grid;
pub mod haar;
pub mod kernels;
pub mod manifest;
pub mod norms;
pub mod packet;
pub mod profiles;

pub use error::{Error, Result};
