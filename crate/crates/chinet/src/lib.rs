//! Deep bilinear tensor-network classifiers: training at desk scale,
//! spectral compression of the trained weights, and weight-based feature
//! extraction with exact logit-reconstruction guarantees.
//!
//! The crate is organised around the pipeline:
//!
//! - [`model`] — the network data model and forward semantics;
//! - [`train`] — dataset ingestion, the training loop, and the ReLU baseline;
//! - [`odt`] — orthogonalise / diagonalise / truncate compression;
//! - [`interpret`] — atoms, interaction matrices, eigenfeatures, explanations;
//! - [`linalg`] — the dense kernels everything else is built on;
//! - [`cli`] — the `chinet` executable surface.
//!
//! Start with the runnable programs under `examples/`.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod interpret;
pub mod odt;
pub mod persist;
pub mod train;

pub use error::{ChiError, Result};
