//! Local graphs over point neighborhoods and their spectra.
//!
//! Graphs are k-NN with Gaussian edge weights, symmetrized by union so every
//! vertex keeps degree >= 1. The Laplacian is always the symmetric normalized
//! form `L = I - D^{-1/2} A D^{-1/2}`, whose spectrum lives in [0, 2].

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat};

/// How the Gaussian kernel width is chosen when weighting edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// sigma = mean distance over all (point, k-NN) pairs.
    MeanKnnDist,
    /// Explicit sigma.
    Fixed(f64),
}

/// Symmetric weighted adjacency with degree vector and normalized Laplacian.
#[derive(Debug, Clone)]
pub struct LocalGraph {
    pub n: usize,
    pub adjacency: Mat,
    pub degree: Vec<f64>,
    pub laplacian: Mat,
}

/// Where a spectral basis came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSource {
    Computed,
    Learned,
}

/// Orthonormal eigenvectors (columns) and ascending eigenvalues of a Laplacian.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub eigenvectors: Mat,
    pub eigenvalues: Vec<f64>,
    pub source: BasisSource,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Indices of the k nearest neighbors of point `i` (excluding `i` itself),
/// ties broken toward the smaller index.
pub fn knn_indices(positions: &[[f64; 3]], i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, p)| (dist2(&positions[i], p), j))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, j)| j).collect()
}

/// Build the symmetrized k-NN graph of a point cloud with Gaussian weights
/// `w_ij = exp(-||x_i - x_j||^2 / sigma^2)`.
pub fn build_knn_graph(pc: &PointCloud, k: usize, sigma_mode: SigmaMode) -> Result<LocalGraph> {
    let n = pc.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| knn_indices(&pc.positions, i, k)).collect();

    let sigma = match sigma_mode {
        SigmaMode::Fixed(s) => {
            if !(s > 0.0) {
                return Err(Error::ZeroSigma);
            }
            s
        }
        SigmaMode::MeanKnnDist => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, nbrs) in neighbors.iter().enumerate() {
                for &j in nbrs {
                    sum += dist2(&pc.positions[i], &pc.positions[j]).sqrt();
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            if mean <= 0.0 {
                return Err(Error::ZeroSigma);
            }
            mean
        }
    };

    let mut adjacency = Mat::zeros(n, n);
    let inv_s2 = 1.0 / (sigma * sigma);
    for (i, nbrs) in neighbors.iter().enumerate() {
        for &j in nbrs {
            let w = (-dist2(&pc.positions[i], &pc.positions[j]) * inv_s2).exp();
            // union symmetrization: an edge from either direction sets both entries
            adjacency.set(i, j, w);
            adjacency.set(j, i, w);
        }
    }

    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    let laplacian = normalized_laplacian(&adjacency)?;
    Ok(LocalGraph {
        n,
        adjacency,
        degree,
        laplacian,
    })
}

/// Rebuild a `LocalGraph` from an explicit adjacency matrix.
pub fn graph_from_adjacency(adjacency: Mat) -> Result<LocalGraph> {
    let n = adjacency.rows();
    let laplacian = normalized_laplacian(&adjacency)?;
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    Ok(LocalGraph {
        n,
        adjacency,
        degree,
        laplacian,
    })
}

/// `L = I - D^{-1/2} A D^{-1/2}` for a symmetric nonnegative adjacency with
/// zero diagonal and strictly positive degrees.
pub fn normalized_laplacian(adjacency: &Mat) -> Result<Mat> {
    assert!(adjacency.is_square(), "adjacency must be square");
    let n = adjacency.rows();
    let asym = adjacency.max_asymmetry();
    if asym > 1e-12 {
        return Err(Error::NotSymmetric {
            max_asym: asym,
            tol: 1e-12,
        });
    }
    for i in 0..n {
        if adjacency.get(i, i) != 0.0 {
            return Err(Error::NonzeroDiagonal(i));
        }
        for j in 0..n {
            if adjacency.get(i, j) < 0.0 {
                return Err(Error::NegativeWeight { i, j });
            }
        }
    }
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let d: f64 = adjacency.row(i).iter().sum();
        if d <= 0.0 {
            return Err(Error::IsolatedVertex(i));
        }
        inv_sqrt_deg[i] = 1.0 / d.sqrt();
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j { 1.0 } else { 0.0 };
            l.set(i, j, v - inv_sqrt_deg[i] * adjacency.get(i, j) * inv_sqrt_deg[j]);
        }
    }
    // exact symmetry regardless of rounding in the products
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (l.get(i, j) + l.get(j, i));
            l.set(i, j, m);
            l.set(j, i, m);
        }
    }
    Ok(l)
}

/// Eigendecompose a symmetric matrix into a `SpectralBasis`.
///
/// `tol` bounds both the accepted input asymmetry and the reconstruction
/// residual `||L - U diag(lambda) U^T||_F <= tol * n * max(1, ||L||_F)`.
/// Eigenvector signs and rotations within degenerate eigenspaces are
/// unspecified; downstream code must not depend on them.
pub fn eigendecompose(l: &Mat, tol: f64) -> Result<SpectralBasis> {
    assert!(l.is_square(), "eigendecompose requires a square matrix");
    let asym = l.max_asymmetry();
    if asym > tol.max(1e-12) {
        return Err(Error::NotSymmetric { max_asym: asym, tol });
    }
    let (eigenvalues, eigenvectors) = sym_eigen(l)?;
    Ok(SpectralBasis {
        eigenvectors,
        eigenvalues,
        source: BasisSource::Computed,
    })
}

/// Spectral connectivity test: true iff the Fiedler value exceeds `eps`.
pub fn fiedler_connectivity(basis: &SpectralBasis, eps: f64) -> bool {
    match basis.eigenvalues.get(1) {
        Some(&l2) => l2 > eps,
        None => true, // a single vertex is trivially connected
    }
}
