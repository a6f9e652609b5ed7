//! Desk-scale EEG / time-series classification pipeline.
//!
//! The crate implements every stage from raw archive files to a trained
//! classifier:
//!
//! 1. [`dataio`] parses `.ts` / TSV archives and writes CSV and PGM outputs.
//! 2. [`ssa`] splits each channel into trend, seasonal and noise components
//!    by singular spectrum analysis.
//! 3. [`tensor`] provides dense tensors with tape-based reverse-mode
//!    automatic differentiation.
//! 4. [`cnn1d`] runs per-component 1D convolution branches with channel
//!    attention and extracts region features.
//! 5. [`mtf`] builds a pairwise Markov random field over the channel x
//!    segment grid, infers node marginals by sum-product belief propagation
//!    and renders them as a topographic image.
//! 6. [`resnet2d`] classifies the rendered images with a small residual
//!    network with per-stage channel attention.
//! 7. [`train`] ties the stages together: losses, optimizers, metrics,
//!    training loops and ablations.
//!
//! The numeric core is generic over the scalar type through [`Scalar`];
//! `f64` is the default precision and the concrete aliases below cover the
//! common case.

pub mod cnn1d;
pub mod config;
pub mod dataio;
pub mod error;
pub mod mtf;
pub mod resnet2d;
pub mod rng;
pub mod scalar;
pub mod ssa;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type.
pub type Real = f64;
/// Dense tensor in the default precision.
pub type Tensor64 = tensor::Tensor<f64>;
/// Dense tensor in single precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Autodiff tape in the default precision.
pub type Tape64 = tensor::tape::Tape<f64>;
/// Dataset in the default precision.
pub type Dataset64 = dataio::Dataset<f64>;
