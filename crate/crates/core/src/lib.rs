//! Spectra of high-frequency covariance matrices of multifractal random walks.
//!
//! The crate has two halves that meet in the middle:
//!
//! * simulation: log-correlated Gaussian fields ([`field`]), lognormal
//!   multifractal measures and return matrices ([`mrm`]), and the empirical
//!   spectra of `R_N = X X^t` ([`spectra`]);
//! * theory: a Picard solver for the limiting resolvent profile `K_z` and
//!   Stieltjes transform `mu2_z` ([`solver`]), and the recovery of the
//!   limiting eigenvalue density from it ([`density`]).
//!
//! [`compare`] measures the distance between the two, and [`cli`] wires
//! everything into the `mrw-spectra` command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod compare;
pub mod density;
pub mod error;
pub mod field;
pub mod mrm;
pub mod seed;
pub mod solver;
pub mod spectra;

pub use error::{Error, Result};
pub use field::Grid;
pub use mrm::{ModelParams, MrmSample, ReturnsMatrix};
pub use num_complex::Complex64;
pub use solver::{KFunction, Solver, SolverConfig};
pub use spectra::SpectrumResult;
