//! Spectral graph wavelet toolkit for 3D point clouds.
//!
//! The crate covers the full pipeline from raw points to spectral features:
//!
//! - [`cloud`]: XYZ/OFF ingestion, unit-sphere normalization, and seeded
//!   synthetic sphere/cube/torus datasets.
//! - [`graph`]: k-NN local graphs with Gaussian weights, the symmetric
//!   normalized Laplacian, and a cyclic-Jacobi eigendecomposition.
//! - [`wavelets`]: Mexican hat / Meyer kernel pairs, scale selection, wavelet
//!   frames `Psi_s = U g_s U^T` with least-squares (pseudoinverse) inversion,
//!   graph Fourier transform, spectral convolution, and Chebyshev filtering.
//! - [`ortho`]: a closed-form orthogonal matrix built from a single unit
//!   vector, the trainable substitute for eigendecomposition, plus its
//!   regularization penalties.
//! - [`nn`]: a minimal reverse-mode tensor tape and the point-cloud classifier
//!   blocks (set abstraction, wavelet-token encoder) with a toy training loop.
//! - [`cli`]: the `graphwave` command-line surface emitting CSV/JSON artifacts.

pub mod cli;
pub mod cloud;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod ortho;
pub mod wavelets;

pub use error::{Error, Result};
