//! Un-trained convolutional generators as image models for linear inverse
//! problems.
//!
//! The crate provides a small reverse-mode differentiation engine, the
//! generator architectures, an exact piecewise-linear construction, the
//! measurement operators (Gaussian, Rademacher, masked Fourier), recovery by
//! fitting generator weights, classical baselines (wavelet thresholding,
//! ℓ1-wavelet ISTA, total variation), empirical checks of the theory, and the
//! file formats used by the `undec` command-line tool.

pub mod autodiff;
pub mod baselines;
pub mod construction;
pub mod error;
pub mod generator;
pub mod io;
pub mod operators;
pub mod parallel;
pub mod phantom;
pub mod recovery;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::Tensor;
