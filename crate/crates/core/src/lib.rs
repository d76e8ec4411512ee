//! Binary neural networks with latent continuous weights, bit-packed ±1
//! kernels, and the high-dimensional geometry that explains why binarized
//! weights and activations still carry the features a network needs.
//!
//! The crate is organized by concern:
//!
//! - [`bitcore`]: packed ±1 vectors and matrices, XNOR-popcount dot products,
//!   random rotations and the generalized binarization `Rᵀ·sign(R·x)`.
//! - [`hdgeom`]: closed-form angle statistics between random vectors and
//!   their binarizations, plus the Monte Carlo machinery that checks them.
//! - [`bnn`]: dense binary layers trained with the straight-through
//!   estimator, batch normalization, SGD with clipping, checkpoints.
//! - [`dynamics`]: the binary linear regression learning dynamics.
//! - [`diagnostics`]: dot-product preservation reports, permutation
//!   controls, weight-angle histograms and PCA.
//! - [`data_io`]: IDX (MNIST) parsing, synthetic datasets, batching.

pub mod bitcore;
pub mod bnn;
pub mod data_io;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod hdgeom;
pub mod stats;
mod tensor;

pub use error::{Error, Result};
pub use tensor::RealTensor;
