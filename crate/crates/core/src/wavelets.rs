//! Graph wavelet frames, transforms, and spectral filtering.
//!
//! A frame stacks one low-pass operator `Psi_0 = U diag(h(lambda_i)) U^T`
//! and J band-pass operators `Psi_s = U diag(g(s lambda_i)) U^T`. The stacked
//! transform is overcomplete; reconstruction uses the pseudoinverse
//! `(Psi^T Psi)^{-1} Psi^T`, which collapses to `U diag(1/p(lambda_i)) U^T`
//! with `p(x) = h^2(x) + sum_j g^2(s_j x)`. Stability requires `p > 0` across
//! the spectrum, which is checked at construction and exposed via
//! [`frame_check`].

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpectralBasis;
use crate::linalg::Mat;

/// Wavelet kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    MexicanHat,
    Meyer,
}

impl KernelFamily {
    pub fn kernels(self) -> KernelPair {
        KernelPair { family: self }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::MexicanHat => "mexican-hat",
            KernelFamily::Meyer => "meyer",
        }
    }

    /// Argument at which the band-pass kernel peaks; used to place scales.
    pub fn band_peak(self) -> f64 {
        match self {
            KernelFamily::MexicanHat => 1.0,
            KernelFamily::Meyer => 4.0 * PI / 3.0,
        }
    }
}

/// A scaling/wavelet kernel pair `h` (low-pass) and `g` (band-pass),
/// with the derivatives needed by the differentiable layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelPair {
    pub family: KernelFamily,
}

/// Meyer auxiliary ramp: 0 below 0, identity on [0, 1], 1 above.
pub fn meyer_ramp(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl KernelPair {
    /// Low-pass scaling kernel h.
    pub fn h(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::MexicanHat => (-x.powi(4)).exp(),
            KernelFamily::Meyer => {
                let c = 1.0 / (2.0 * PI).sqrt();
                if x <= 2.0 * PI / 3.0 {
                    c
                } else if x <= 4.0 * PI / 3.0 {
                    c * (0.5 * PI * meyer_ramp(1.5 * x / PI - 1.0)).cos()
                } else {
                    0.0
                }
            }
        }
    }

    /// Band-pass wavelet kernel g. For Meyer this is the modulus of the
    /// complex kernel: the unit-modulus phase factor is dropped so the
    /// operators stay real symmetric.
    pub fn g(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::MexicanHat => x * (-x).exp(),
            KernelFamily::Meyer => {
                let c = 1.0 / (2.0 * PI).sqrt();
                if x < 2.0 * PI / 3.0 {
                    0.0
                } else if x <= 4.0 * PI / 3.0 {
                    c * (0.5 * PI * meyer_ramp(1.5 * x / PI - 1.0)).sin()
                } else if x <= 8.0 * PI / 3.0 {
                    c * (0.5 * PI * meyer_ramp(0.75 * x / PI - 1.0)).cos()
                } else {
                    0.0
                }
            }
        }
    }

    /// dh/dx (one-sided at Meyer branch points).
    pub fn dh(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::MexicanHat => -4.0 * x.powi(3) * (-x.powi(4)).exp(),
            KernelFamily::Meyer => {
                let c = 1.0 / (2.0 * PI).sqrt();
                if x <= 2.0 * PI / 3.0 || x > 4.0 * PI / 3.0 {
                    0.0
                } else {
                    let t = 1.5 * x / PI - 1.0;
                    if !(0.0..=1.0).contains(&t) {
                        0.0
                    } else {
                        -c * (0.5 * PI * t).sin() * 0.5 * PI * 1.5 / PI
                    }
                }
            }
        }
    }

    /// dg/dx (one-sided at Meyer branch points).
    pub fn dg(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::MexicanHat => (1.0 - x) * (-x).exp(),
            KernelFamily::Meyer => {
                let c = 1.0 / (2.0 * PI).sqrt();
                if x < 2.0 * PI / 3.0 || x > 8.0 * PI / 3.0 {
                    0.0
                } else if x <= 4.0 * PI / 3.0 {
                    let t = 1.5 * x / PI - 1.0;
                    if !(0.0..=1.0).contains(&t) {
                        0.0
                    } else {
                        c * (0.5 * PI * t).cos() * 0.5 * PI * 1.5 / PI
                    }
                } else {
                    let t = 0.75 * x / PI - 1.0;
                    if !(0.0..=1.0).contains(&t) {
                        0.0
                    } else {
                        -c * (0.5 * PI * t).sin() * 0.5 * PI * 0.75 / PI
                    }
                }
            }
        }
    }
}

/// Mexican hat kernel pair: `h(x) = exp(-x^4)`, `g(x) = x exp(-x)`.
pub fn mexican_hat_kernels() -> KernelPair {
    KernelFamily::MexicanHat.kernels()
}

/// Meyer kernel pair (modulus of the band-pass branch).
pub fn meyer_kernels() -> KernelPair {
    KernelFamily::Meyer.kernels()
}

/// Place J scales so the band-pass peaks tile the spectrum: peak targets are
/// log-spaced from `lambda_max` down to `lambda_max / 20`, and `s_j` maps the
/// unit-peak kernel onto each target. Output is ascending.
pub fn select_scales(lambda_max: f64, j: usize) -> Vec<f64> {
    assert!(lambda_max > 0.0, "lambda_max must be positive");
    assert!(j >= 1, "need at least one scale");
    if j == 1 {
        return vec![1.0 / lambda_max];
    }
    let lo = lambda_max / 20.0;
    let ratio = (lo / lambda_max).ln();
    (0..j)
        .map(|i| {
            let t = i as f64 / (j - 1) as f64;
            let target = lambda_max * (ratio * t).exp();
            1.0 / target
        })
        .collect()
}

/// Family-aware scale selection: multiplies [`select_scales`] by the kernel's
/// band peak so each `g(s_j lambda)` still peaks at the log-spaced targets.
pub fn select_scales_for(family: KernelFamily, lambda_max: f64, j: usize) -> Vec<f64> {
    select_scales(lambda_max, j)
        .into_iter()
        .map(|s| s * family.band_peak())
        .collect()
}

static FRAME_COUNTER: AtomicU64 = AtomicU64::new(1);

/// A constructed wavelet frame: basis, kernels, scales, the 1+J stacked
/// symmetric operators, and the frame values `p(lambda_i)`.
#[derive(Debug, Clone)]
pub struct WaveletFrame {
    pub id: u64,
    pub basis: SpectralBasis,
    pub kernels: KernelPair,
    pub scales: Vec<f64>,
    /// `operators[0]` is the scaling operator; `operators[j]` is scale `s_j`.
    pub operators: Vec<Mat>,
    pub frame_values: Vec<f64>,
}

impl WaveletFrame {
    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }
}

/// Coefficients of the stacked transform: one n x c block per scale.
#[derive(Debug, Clone)]
pub struct WaveletCoefficients {
    pub coeffs: Vec<Mat>,
    pub frame_id: u64,
}

/// Frame value `p(x) = h^2(x) + sum_j g^2(s_j x)`.
pub fn frame_value(kernels: &KernelPair, scales: &[f64], x: f64) -> f64 {
    let h = kernels.h(x);
    let mut p = h * h;
    for &s in scales {
        let g = kernels.g(s * x);
        p += g * g;
    }
    p
}

/// Build the stacked operators for a basis. Refuses construction when the
/// frame condition fails at any eigenvalue (`p(lambda_i) <= 1e-12`), since the
/// pseudoinverse would then amplify noise without bound.
pub fn build_frame(
    basis: &SpectralBasis,
    kernels: KernelPair,
    scales: &[f64],
) -> Result<WaveletFrame> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("need at least one scale".into()));
    }
    for w in scales.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(
                "scales must be strictly ascending".into(),
            ));
        }
    }
    if scales[0] <= 0.0 {
        return Err(Error::InvalidArgument("scales must be positive".into()));
    }

    let frame_values: Vec<f64> = basis
        .eigenvalues
        .iter()
        .map(|&l| frame_value(&kernels, scales, l))
        .collect();
    for (&l, &p) in basis.eigenvalues.iter().zip(&frame_values) {
        if p <= 1e-12 {
            return Err(Error::FrameViolation { lambda: l, p });
        }
    }

    let mut operators = Vec::with_capacity(1 + scales.len());
    let h_diag: Vec<f64> = basis.eigenvalues.iter().map(|&l| kernels.h(l)).collect();
    operators.push(spectral_operator(basis, &h_diag));
    for &s in scales {
        let g_diag: Vec<f64> = basis
            .eigenvalues
            .iter()
            .map(|&l| kernels.g(s * l))
            .collect();
        operators.push(spectral_operator(basis, &g_diag));
    }

    Ok(WaveletFrame {
        id: FRAME_COUNTER.fetch_add(1, Ordering::Relaxed),
        basis: basis.clone(),
        kernels,
        scales: scales.to_vec(),
        operators,
        frame_values,
    })
}

/// `U diag(d) U^T`, symmetrized exactly.
fn spectral_operator(basis: &SpectralBasis, diag: &[f64]) -> Mat {
    // (U diag) U^T with the diagonal applied to U's columns
    let u = &basis.eigenvectors;
    let n = u.rows();
    let mut ud = u.clone();
    for i in 0..n {
        for (j, &d) in diag.iter().enumerate() {
            ud.set(i, j, ud.get(i, j) * d);
        }
    }
    let mut m = ud.matmul_nt(u);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// Forward transform: `coeffs[j] = Psi_j f`.
pub fn wavelet_transform(frame: &WaveletFrame, f: &Mat) -> Result<WaveletCoefficients> {
    if f.rows() != frame.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, frame expects {}",
            f.rows(),
            frame.n()
        )));
    }
    let coeffs = frame.operators.iter().map(|psi| psi.matmul(f)).collect();
    Ok(WaveletCoefficients {
        coeffs,
        frame_id: frame.id,
    })
}

/// Least-squares inverse: `U diag(1/p) U^T  *  sum_j Psi_j coeffs[j]`.
///
/// Exact on the range of the forward transform.
pub fn inverse_wavelet_transform(frame: &WaveletFrame, coeffs: &WaveletCoefficients) -> Result<Mat> {
    if coeffs.frame_id != frame.id {
        return Err(Error::DimensionMismatch(
            "coefficients were produced against a different frame".into(),
        ));
    }
    if coeffs.coeffs.len() != frame.operators.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficient blocks for {} operators",
            coeffs.coeffs.len(),
            frame.operators.len()
        )));
    }
    for (&l, &p) in frame.basis.eigenvalues.iter().zip(&frame.frame_values) {
        if p <= 1e-12 {
            return Err(Error::FrameViolation { lambda: l, p });
        }
    }
    let n = frame.n();
    let cols = coeffs.coeffs[0].cols();
    let mut adjoint = Mat::zeros(n, cols);
    for (psi, block) in frame.operators.iter().zip(&coeffs.coeffs) {
        if block.rows() != n || block.cols() != cols {
            return Err(Error::DimensionMismatch(
                "coefficient block shape mismatch".into(),
            ));
        }
        adjoint = adjoint.add(&psi.matmul(block));
    }
    let inv_p: Vec<f64> = frame.frame_values.iter().map(|p| 1.0 / p).collect();
    let gram_inv = spectral_operator(&frame.basis, &inv_p);
    Ok(gram_inv.matmul(&adjoint))
}

/// One sampled row of the frame diagnostic table.
#[derive(Debug, Clone, Serialize)]
pub struct FrameSample {
    pub lambda: f64,
    pub h_sq: f64,
    pub g_sq: Vec<f64>,
    pub p: f64,
}

/// Frame diagnostic over a sampled grid: the minimum of `p` and the full
/// per-sample table of `h^2`, each `g^2(s_j lambda)`, and `p`.
pub fn frame_check(kernels: &KernelPair, scales: &[f64], grid: &[f64]) -> (f64, Vec<FrameSample>) {
    let mut min_p = f64::INFINITY;
    let mut rows = Vec::with_capacity(grid.len());
    for &l in grid {
        let h = kernels.h(l);
        let g_sq: Vec<f64> = scales
            .iter()
            .map(|&s| {
                let g = kernels.g(s * l);
                g * g
            })
            .collect();
        let p = h * h + g_sq.iter().sum::<f64>();
        min_p = min_p.min(p);
        rows.push(FrameSample {
            lambda: l,
            h_sq: h * h,
            g_sq,
            p,
        });
    }
    (min_p, rows)
}

/// Evenly spaced grid on [0, hi] with `n` samples, endpoints included.
pub fn linspace(hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect()
}

/// Graph Fourier transform `fhat = U^T f`.
pub fn graph_fourier(basis: &SpectralBasis, f: &Mat) -> Result<Mat> {
    if f.rows() != basis.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, basis expects {}",
            f.rows(),
            basis.n()
        )));
    }
    Ok(basis.eigenvectors.matmul_tn(f))
}

/// Inverse graph Fourier transform `f = U fhat`.
pub fn inverse_graph_fourier(basis: &SpectralBasis, fhat: &Mat) -> Result<Mat> {
    if fhat.rows() != basis.n() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum has {} rows, basis expects {}",
            fhat.rows(),
            basis.n()
        )));
    }
    Ok(basis.eigenvectors.matmul(fhat))
}

/// Spectral convolution `U diag(theta) U^T f`.
pub fn spectral_convolution(basis: &SpectralBasis, theta: &[f64], f: &Mat) -> Result<Mat> {
    if theta.len() != basis.n() {
        return Err(Error::DimensionMismatch(format!(
            "filter has {} entries, basis expects {}",
            theta.len(),
            basis.n()
        )));
    }
    let fhat = graph_fourier(basis, f)?;
    inverse_graph_fourier(basis, &fhat.scale_rows(theta))
}

/// Apply `sum_k theta_k T_k(Ltilde) f` with `Ltilde = 2 L / lambda_max - I`,
/// via the three-term recurrence. Never materializes an eigendecomposition.
pub fn chebyshev_filter(l: &Mat, lambda_max: f64, theta: &[f64], f: &Mat) -> Result<Mat> {
    if theta.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one Chebyshev coefficient".into(),
        ));
    }
    if l.rows() != f.rows() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{}, signal has {} rows",
            l.rows(),
            l.cols(),
            f.rows()
        )));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidArgument("lambda_max must be positive".into()));
    }

    let scale = 2.0 / lambda_max;
    // Ltilde x = scale * L x - x
    let apply = |x: &Mat| -> Mat { l.matmul(x).scale(scale).sub(x) };

    let mut out = f.scale(theta[0]);
    if theta.len() == 1 {
        return Ok(out);
    }
    let mut t_prev = f.clone();
    let mut t_cur = apply(f);
    out = out.add(&t_cur.scale(theta[1]));
    for &th in &theta[2..] {
        let t_next = apply(&t_cur).scale(2.0).sub(&t_prev);
        out = out.add(&t_next.scale(th));
        t_prev = t_cur;
        t_cur = t_next;
    }
    Ok(out)
}

/// Chebyshev-node collocation fit of `lambda -> kernel(scale * lambda)` on
/// `[0, lambda_max]`. The returned coefficients follow the same convention as
/// [`chebyshev_filter`]: `sum_k theta_k T_k(x)` with the constant term already
/// folded (no half-weight on `theta_0`).
pub fn fit_chebyshev_coeffs(
    kernel: impl Fn(f64) -> f64,
    scale: f64,
    lambda_max: f64,
    degree: usize,
) -> Vec<f64> {
    let m = degree + 1;
    let nodes: Vec<f64> = (0..m)
        .map(|i| (PI * (i as f64 + 0.5) / m as f64).cos())
        .collect();
    let values: Vec<f64> = nodes
        .iter()
        .map(|&x| kernel(scale * (x + 1.0) * lambda_max / 2.0))
        .collect();
    let mut coeffs = Vec::with_capacity(m);
    for k in 0..m {
        let mut c = 0.0;
        for (i, &v) in values.iter().enumerate() {
            c += v * (PI * k as f64 * (i as f64 + 0.5) / m as f64).cos();
        }
        c *= 2.0 / m as f64;
        if k == 0 {
            c *= 0.5;
        }
        coeffs.push(c);
    }
    coeffs
}

/// Evaluate a fitted expansion at `lambda` (Clenshaw recurrence).
pub fn eval_chebyshev(coeffs: &[f64], lambda_max: f64, lambda: f64) -> f64 {
    let x = 2.0 * lambda / lambda_max - 1.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().rev() {
        let b0 = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    // undo the doubling of the constant term introduced by the recurrence
    b1 - x * b2
}

/// Which operator drives an impulse-response query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpulseMode {
    /// Spectral coefficients of the impulse, `|U^T delta_v|`, plotted per vertex.
    Fourier,
    /// `|Psi_0 delta_v|`.
    Scaling,
    /// `|Psi_{s_j} delta_v|` for the 1-based scale index `j`.
    Wavelet(usize),
}

/// Per-vertex magnitudes of the transformed delta impulse at `vertex`.
pub fn impulse_response(frame: &WaveletFrame, vertex: usize, mode: ImpulseMode) -> Result<Vec<f64>> {
    let n = frame.n();
    if vertex >= n {
        return Err(Error::VertexOutOfRange { index: vertex, n });
    }
    let column = match mode {
        ImpulseMode::Fourier => {
            // U^T delta_v is the v-th row of U
            frame.basis.eigenvectors.row(vertex).to_vec()
        }
        ImpulseMode::Scaling => frame.operators[0].col(vertex),
        ImpulseMode::Wavelet(j) => {
            if j == 0 || j > frame.num_scales() {
                return Err(Error::InvalidArgument(format!(
                    "wavelet scale index {} out of 1..={}",
                    j,
                    frame.num_scales()
                )));
            }
            frame.operators[j].col(vertex)
        }
    };
    Ok(column.into_iter().map(f64::abs).collect())
}

/// BFS hop distances from `source` over nonzero adjacency entries.
pub fn bfs_hops(adjacency: &Mat, source: usize) -> Vec<Option<usize>> {
    let n = adjacency.rows();
    let mut dist = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for v in 0..n {
            if adjacency.get(u, v) > 0.0 && dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Fraction of the column's energy within `hops` of the center vertex.
pub fn energy_fraction_within_hops(
    adjacency: &Mat,
    column: &[f64],
    center: usize,
    hops: usize,
) -> f64 {
    let dist = bfs_hops(adjacency, center);
    let total: f64 = column.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let near: f64 = column
        .iter()
        .enumerate()
        .filter(|(i, _)| matches!(dist[*i], Some(d) if d <= hops))
        .map(|(_, v)| v * v)
        .sum();
    near / total
}
