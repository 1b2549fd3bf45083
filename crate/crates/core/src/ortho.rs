//! Closed-form orthogonal matrices from a single unit vector, and the
//! trainable parameterization that substitutes for eigendecomposition.
//!
//! Given a unit vector `q` (not within 1e-6 of +/- e1), the matrix
//!
//! ```text
//! U = [ q_1   -q_2        ...  -q_n      ]
//!     [ q_2   F(2,2) + 1  ...  F(2,n)    ]
//!     [ ...                              ]
//!     [ q_n   F(n,2)      ...  F(n,n)+1  ]
//!
//! F(i, j) = q_i q_j (q_1 - 1) / sum_{k>=2} q_k^2
//! ```
//!
//! is exactly orthogonal with first column `q`. Pairing it with eigenvalues
//! `lambda_1 = 0 <= lambda_2 <= ...` synthesizes a valid Laplacian
//! `U diag(lambda) U^T` without ever touching a distance matrix: symmetric,
//! positive semi-definite, and (for constant `q`) zero row sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BasisSource, SpectralBasis};
use crate::linalg::{norm2, Mat};

/// Trainable spectral parameters: a shared scalar `c` behind `q_ini`, the
/// perturbation `q_eps`, and `lambda_theta` realizing eigenvalues
/// `tanh(lambda_theta_i) + 1` in (0, 2) with `lambda_1` pinned to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthoParam {
    pub n: usize,
    /// The shared entry of `q_ini = (c, c, ..., c)`; must stay nonzero.
    pub c: f64,
    /// Length-n additive perturbation.
    pub q_eps: Vec<f64>,
    /// Length n-1 raw eigenvalue parameters (for lambda_2 .. lambda_n).
    pub lambda_theta: Vec<f64>,
}

impl OrthoParam {
    /// Constant-vector initialization: `c = 1/sqrt(n)`, `q_eps = 0`,
    /// `lambda_theta = 0` (all learned eigenvalues start at 1).
    pub fn constant_init(n: usize) -> Self {
        assert!(n >= 2, "need at least two vertices");
        OrthoParam {
            n,
            c: 1.0 / (n as f64).sqrt(),
            q_eps: vec![0.0; n],
            lambda_theta: vec![0.0; n - 1],
        }
    }

    /// The realized unit vector `normalize(q_ini + q_eps)`.
    pub fn q(&self) -> Result<Vec<f64>> {
        if self.c == 0.0 {
            return Err(Error::InvalidArgument("q_ini scalar c must be nonzero".into()));
        }
        if self.q_eps.len() != self.n || self.lambda_theta.len() != self.n - 1 {
            return Err(Error::DimensionMismatch(
                "OrthoParam vector lengths do not match n".into(),
            ));
        }
        let mut q: Vec<f64> = self.q_eps.iter().map(|e| self.c + e).collect();
        let norm = norm2(&q);
        if norm < 1e-14 {
            return Err(Error::DegenerateDirection);
        }
        for v in &mut q {
            *v /= norm;
        }
        Ok(q)
    }

    /// Realized eigenvalues: 0 followed by ascending `tanh(theta) + 1`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut tail: Vec<f64> = self.lambda_theta.iter().map(|t| t.tanh() + 1.0).collect();
        tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out = Vec::with_capacity(self.n);
        out.push(0.0);
        out.extend(tail);
        out
    }
}

/// Regularization knobs shared by the learnable variants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrthoConfig {
    /// Weight of the regularization term in the total loss.
    pub beta: f64,
    /// Frobenius tolerance under which a penalized free matrix is treated as
    /// orthogonal.
    pub eps_orth: f64,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        OrthoConfig {
            beta: 0.05,
            eps_orth: 1e-4,
        }
    }
}

/// Build the closed-form orthogonal completion of a unit vector.
///
/// The first column equals `q` bitwise. Fails when `q` is not normalized or
/// lies within 1e-6 of +/- e1 (the denominator of F vanishes there).
pub fn orthogonal_from_vector(q: &[f64]) -> Result<Mat> {
    let n = q.len();
    if n < 2 {
        return Err(Error::DegenerateDirection);
    }
    let norm_dev = (norm2(q) - 1.0).abs();
    if norm_dev > 1e-10 {
        return Err(Error::NonUnitVector(norm_dev));
    }
    let tail: f64 = q[1..].iter().map(|v| v * v).sum();
    if tail <= 1e-14 {
        return Err(Error::DegenerateDirection);
    }
    // loud rejection near the degenerate axis rather than regularization
    let mut to_e1 = (q[0] - 1.0).powi(2) + tail;
    let mut to_neg_e1 = (q[0] + 1.0).powi(2) + tail;
    to_e1 = to_e1.sqrt();
    to_neg_e1 = to_neg_e1.sqrt();
    if to_e1.min(to_neg_e1) < 1e-6 {
        return Err(Error::DegenerateDirection);
    }

    let alpha = (q[0] - 1.0) / tail;
    let mut u = Mat::zeros(n, n);
    for i in 0..n {
        u.set(i, 0, q[i]);
    }
    for j in 1..n {
        u.set(0, j, -q[j]);
    }
    for i in 1..n {
        for j in 1..n {
            let f = q[i] * q[j] * alpha;
            u.set(i, j, if i == j { f + 1.0 } else { f });
        }
    }
    Ok(u)
}

/// Realize the learned spectral basis from trainable parameters.
pub fn realize_basis(param: &OrthoParam) -> Result<SpectralBasis> {
    let q = param.q()?;
    let eigenvectors = orthogonal_from_vector(&q)?;
    Ok(SpectralBasis {
        eigenvectors,
        eigenvalues: param.eigenvalues(),
        source: BasisSource::Learned,
    })
}

/// Synthesize the Laplacian `U diag(lambda) U^T` of a learned basis.
///
/// Requires `basis.source == Learned` and a constant first column (the
/// converged regime where `q_eps` has been driven to zero); otherwise the
/// zero-row-sum property cannot hold and the call fails loudly.
pub fn synth_laplacian(basis: &SpectralBasis) -> Result<Mat> {
    if basis.source != BasisSource::Learned {
        return Err(Error::NotLearnedBasis);
    }
    let n = basis.n();
    let first = basis.eigenvectors.col(0);
    let spread = first.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
        - first.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if spread.abs() > 1e-10 {
        return Err(Error::NonConstantFirstColumn(spread));
    }
    let u = &basis.eigenvectors;
    let mut ud = u.clone();
    for i in 0..n {
        for (j, &l) in basis.eigenvalues.iter().enumerate() {
            ud.set(i, j, ud.get(i, j) * l);
        }
    }
    let mut lap = ud.matmul_nt(u);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (lap.get(i, j) + lap.get(j, i));
            lap.set(i, j, v);
            lap.set(j, i, v);
        }
    }
    Ok(lap)
}

/// L1 norm of the perturbation, the Fig-style sparsity regularizer.
/// Subgradient at 0 is taken as 0.
pub fn qeps_penalty(param: &OrthoParam) -> f64 {
    param.q_eps.iter().map(|v| v.abs()).sum()
}

/// The free-matrix acceptance test: a penalized `U` counts as orthogonal
/// once `||I - U U^T||_F^2` drops below the configured tolerance.
pub fn is_effectively_orthogonal(u: &Mat, cfg: &OrthoConfig) -> bool {
    ortho_penalty(u) < cfg.eps_orth
}

/// `||I - U U^T||_F^2`, the penalty used when training a free matrix.
pub fn ortho_penalty(u: &Mat) -> f64 {
    assert!(u.is_square(), "ortho_penalty requires a square matrix");
    let n = u.rows();
    let gram = u.matmul_nt(u);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = target - gram.get(i, j);
            acc += d * d;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = norm2(&q);
            if norm < 1e-3 {
                continue;
            }
            for v in &mut q {
                *v /= norm;
            }
            let tail: f64 = q[1..].iter().map(|v| v * v).sum();
            if tail.sqrt() > 1e-5 {
                return q;
            }
        }
    }

    #[test]
    fn construction_2d_closed_form() {
        let u = orthogonal_from_vector(&[0.6, 0.8]).unwrap();
        // F(2,2) = (0.64 / 0.64)(0.6 - 1) = -0.4, so U22 = 0.6
        assert!((u.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((u.get(0, 1) + 0.8).abs() < 1e-15);
        assert!((u.get(1, 0) - 0.8).abs() < 1e-15);
        assert!((u.get(1, 1) - 0.6).abs() < 1e-15);
        assert!(u.max_gram_identity_deviation() < 1e-15);
    }

    #[test]
    fn degenerate_axis_rejected() {
        let mut q = vec![0.0; 4];
        q[0] = 1.0;
        assert!(matches!(
            orthogonal_from_vector(&q),
            Err(Error::DegenerateDirection)
        ));
        q[0] = -1.0;
        assert!(matches!(
            orthogonal_from_vector(&q),
            Err(Error::DegenerateDirection)
        ));
        assert!(matches!(
            orthogonal_from_vector(&[0.5, 0.5]),
            Err(Error::NonUnitVector(_))
        ));
    }

    #[test]
    fn constant_vector_construction() {
        for n in [2usize, 4, 16, 256] {
            let q = vec![1.0 / (n as f64).sqrt(); n];
            let u = orthogonal_from_vector(&q).unwrap();
            assert!(u.max_gram_identity_deviation() <= 1e-12 * n as f64);
            for i in 0..n {
                // bitwise: the first column is copied, never recomputed
                assert_eq!(u.get(i, 0), q[i]);
            }
        }
    }

    #[test]
    fn random_vectors_exactly_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for n in [2usize, 3, 8, 32, 128] {
            for _ in 0..50 {
                let q = random_unit(n, &mut rng);
                let u = orthogonal_from_vector(&q).unwrap();
                assert!(
                    u.max_gram_identity_deviation() <= 1e-12 * n as f64,
                    "n = {n}"
                );
                for i in 0..n {
                    assert_eq!(u.get(i, 0), q[i]);
                }
            }
        }
    }

    #[test]
    fn realize_basis_defaults() {
        let p = OrthoParam::constant_init(6);
        let basis = realize_basis(&p).unwrap();
        assert_eq!(basis.source, BasisSource::Learned);
        assert_eq!(basis.eigenvalues[0], 0.0);
        for &l in &basis.eigenvalues[1..] {
            assert!((l - 1.0).abs() < 1e-15); // tanh(0) + 1
        }
        let first = basis.eigenvectors.col(0);
        let expect = 1.0 / 6.0f64.sqrt();
        for v in first {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn realized_eigenvalues_in_range_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..32);
            let p = OrthoParam {
                n,
                c: rng.random_range(0.1..2.0),
                q_eps: vec![0.0; n],
                lambda_theta: (0..n - 1).map(|_| rng.random_range(-3.0..3.0)).collect(),
            };
            let vals = p.eigenvalues();
            assert_eq!(vals[0], 0.0);
            for w in vals.windows(2) {
                assert!(w[0] <= w[1]);
            }
            for &l in &vals[1..] {
                assert!(l > 0.0 && l < 2.0);
            }
            // idempotent under re-realization
            assert_eq!(vals, p.eigenvalues());
        }
    }

    #[test]
    fn synth_laplacian_2x2() {
        let basis = SpectralBasis {
            eigenvectors: orthogonal_from_vector(&[
                std::f64::consts::FRAC_1_SQRT_2,
                std::f64::consts::FRAC_1_SQRT_2,
            ])
            .unwrap(),
            eigenvalues: vec![0.0, 2.0],
            source: BasisSource::Learned,
        };
        let l = synth_laplacian(&basis).unwrap();
        let expect = Mat::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(l.sub(&expect).max_abs() < 1e-12);
    }

    #[test]
    fn synth_laplacian_structural_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let n = rng.random_range(2..64);
            let p = OrthoParam {
                n,
                c: if rng.random::<bool>() { 0.7 } else { -0.3 },
                q_eps: vec![0.0; n],
                lambda_theta: (0..n - 1).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            let basis = realize_basis(&p).unwrap();
            let l = synth_laplacian(&basis).unwrap();
            assert!(l.max_asymmetry() < 1e-10);
            for i in 0..n {
                let row_sum: f64 = l.row(i).iter().sum();
                assert!(row_sum.abs() < 1e-10, "row {i} sums to {row_sum}");
            }
            let (vals, _) = crate::linalg::sym_eigen(&l).unwrap();
            assert!(vals[0] >= -1e-10);
        }
    }

    #[test]
    fn synth_laplacian_rejects_nonconstant_first_column() {
        let p = OrthoParam {
            n: 5,
            c: 1.0,
            q_eps: vec![0.3, -0.2, 0.0, 0.1, 0.05],
            lambda_theta: vec![0.0; 4],
        };
        let basis = realize_basis(&p).unwrap();
        assert!(matches!(
            synth_laplacian(&basis),
            Err(Error::NonConstantFirstColumn(_))
        ));
        // and a computed basis is rejected outright
        let computed = SpectralBasis {
            eigenvectors: Mat::identity(3),
            eigenvalues: vec![0.0, 1.0, 2.0],
            source: BasisSource::Computed,
        };
        assert!(matches!(
            synth_laplacian(&computed),
            Err(Error::NotLearnedBasis)
        ));
    }

    #[test]
    fn qeps_penalty_values_and_gradient_sign() {
        let mut p = OrthoParam::constant_init(2);
        assert_eq!(qeps_penalty(&p), 0.0);
        p.q_eps = vec![0.1, -0.2];
        assert!((qeps_penalty(&p) - 0.3).abs() < 1e-15);

        // central differences on each coordinate away from zero
        let eps = 1e-7;
        for i in 0..2 {
            let mut plus = p.clone();
            plus.q_eps[i] += eps;
            let mut minus = p.clone();
            minus.q_eps[i] -= eps;
            let fd = (qeps_penalty(&plus) - qeps_penalty(&minus)) / (2.0 * eps);
            assert!((fd - p.q_eps[i].signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn ortho_penalty_values() {
        let u = orthogonal_from_vector(&[0.6, 0.8]).unwrap();
        assert!(ortho_penalty(&u) <= 1e-20 * 4.0);

        let two_i = Mat::identity(3).scale(2.0);
        assert!((ortho_penalty(&two_i) - 27.0).abs() < 1e-12);

        let zero = Mat::zeros(3, 3);
        assert!((ortho_penalty(&zero) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn effective_orthogonality_threshold() {
        let cfg = OrthoConfig::default();
        let u = orthogonal_from_vector(&[0.6, 0.8]).unwrap();
        assert!(is_effectively_orthogonal(&u, &cfg));
        assert!(!is_effectively_orthogonal(&Mat::identity(3).scale(1.01), &cfg));
    }
}
