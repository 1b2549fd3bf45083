//! Dense row-major matrices and the symmetric eigensolver.
//!
//! Everything in this crate works on local graphs of at most a few hundred
//! vertices, so a plain `Vec<f64>`-backed dense matrix with straightforward
//! kernels is both sufficient and easy to audit. The eigensolver is cyclic
//! Jacobi: unconditionally stable for real symmetric matrices at these sizes.

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match dimensions");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Diagonal matrix from a slice.
    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Mat::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        matmul_into(
            &self.data, self.rows, self.cols,
            &other.data, other.cols,
            &mut out.data,
        );
        out
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let m = self.cols;
        let n = other.cols;
        let mut out = Mat::zeros(m, n);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                out.set(i, j, dot(arow, other.row(j)));
            }
        }
        out
    }

    /// `self * v` for a length-`cols` vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Scale every row `i` by `d[i]` (i.e. `diag(d) * self`).
    pub fn scale_rows(&self, d: &[f64]) -> Mat {
        assert_eq!(d.len(), self.rows);
        let mut out = self.clone();
        for i in 0..self.rows {
            let s = d[i];
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// `max |I - self * self^T|`, using the symmetry of the Gram matrix.
    pub fn max_gram_identity_deviation(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            let ri = self.row(i);
            for j in i..n {
                let g = dot(ri, self.row(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Dot product with four independent accumulators so the loop can use
/// instruction-level parallelism; deterministic for a fixed build.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (s0 + s1) + (s2 + s3) + tail
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `out += a (ra x ca) * b (ca x cb)`, ikj order so the inner loop is contiguous.
pub fn matmul_into(a: &[f64], ra: usize, ca: usize, b: &[f64], cb: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), ra * ca);
    debug_assert_eq!(b.len(), ca * cb);
    debug_assert_eq!(out.len(), ra * cb);
    for i in 0..ra {
        let arow = &a[i * ca..(i + 1) * ca];
        let orow = &mut out[i * cb..(i + 1) * cb];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * cb..(k + 1) * cb];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// Convergence threshold for the Jacobi sweep, relative to `||A||_F`.
const JACOBI_REL_TOL: f64 = 1e-13;
/// Sweep budget; dense symmetric matrices at n <= 512 converge in well under this.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. Convergence is declared when the off-diagonal
/// Frobenius mass drops below `1e-13 * ||A||_F`.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    assert!(a.is_square(), "sym_eigen requires a square matrix");
    let n = a.rows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    if n == 1 {
        return Ok((vec![a.get(0, 0)], Mat::identity(1)));
    }

    let mut w = a.clone();
    let mut v = Mat::identity(n);
    let fro = a.frobenius_norm();
    let target = JACOBI_REL_TOL * fro.max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let x = w.get(i, j);
                    s += 2.0 * x * x;
                }
            }
            s.sqrt()
        };
        if off <= target {
            converged = true;
            break;
        }

        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = w.get(p, p);
                let aqq = w.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                // stable tangent of the rotation angle
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                w.set(p, p, app - t * apq);
                w.set(q, q, aqq + t * apq);
                w.set(p, q, 0.0);
                w.set(q, p, 0.0);

                for i in 0..n {
                    if i != p && i != q {
                        let aip = w.get(i, p);
                        let aiq = w.get(i, q);
                        let new_ip = aip - s * (aiq + tau * aip);
                        let new_iq = aiq + s * (aip - tau * aiq);
                        w.set(i, p, new_ip);
                        w.set(p, i, new_ip);
                        w.set(i, q, new_iq);
                        w.set(q, i, new_iq);
                    }
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, vip - s * (viq + tau * vip));
                    v.set(i, q, viq + s * (vip - tau * viq));
                }
            }
        }
    }
    if !converged {
        // final check: the last sweep may have pushed us under the target
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let x = w.get(i, j);
                s += 2.0 * x * x;
            }
        }
        if s.sqrt() > target {
            return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| w.get(i, i)).collect();
    order.sort_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, new_col, v.get(i, old_col));
        }
    }
    Ok((eigenvalues, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_small() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Mat::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.row(0), &[19.0, 22.0]);
        assert_eq!(c.row(1), &[43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Mat::from_rows(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let b = Mat::from_rows(&[&[2.0, 1.0, -1.0], &[1.0, 0.0, 4.0]]);
        let nt = a.matmul_nt(&b);
        let via_t = a.matmul(&b.transpose());
        assert!(nt.sub(&via_t).max_abs() < 1e-15);

        let tn = a.matmul_tn(&b);
        let via_t2 = a.transpose().matmul(&b);
        assert!(tn.sub(&via_t2).max_abs() < 1e-15);
    }

    #[test]
    fn eigen_2x2_closed_form() {
        let l = Mat::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let (vals, vecs) = sym_eigen(&l).unwrap();
        assert_close(vals[0], 0.0, 1e-14);
        assert_close(vals[1], 2.0, 1e-14);
        // columns span (1,1)/sqrt2 and (1,-1)/sqrt2 up to sign
        let c0 = vecs.col(0);
        assert_close(c0[0].abs(), std::f64::consts::FRAC_1_SQRT_2, 1e-12);
        assert_close(c0[0], c0[1], 1e-12);
    }

    #[test]
    fn eigen_identity_reconstructs() {
        let l = Mat::identity(4);
        let (vals, vecs) = sym_eigen(&l).unwrap();
        for v in &vals {
            assert_close(*v, 1.0, 1e-14);
        }
        let lam = Mat::from_diag(&vals);
        let rec = vecs.matmul(&lam).matmul_nt(&vecs);
        assert!(rec.sub(&l).max_abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstruction_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [3usize, 8, 17, 33] {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = rng.random_range(-1.0..1.0);
                    a.set(i, j, v);
                    a.set(j, i, v);
                }
            }
            let (vals, vecs) = sym_eigen(&a).unwrap();
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-12, "eigenvalues not ascending");
            }
            let rec = vecs.matmul(&Mat::from_diag(&vals)).matmul_nt(&vecs);
            let rel = rec.sub(&a).frobenius_norm() / a.frobenius_norm();
            assert!(rel < 1e-12, "rel reconstruction error {rel} at n={n}");
            assert!(vecs.max_gram_identity_deviation() < 1e-12);
        }
    }

    #[test]
    fn gram_deviation_detects_nonorthogonal() {
        let m = Mat::from_rows(&[&[1.0, 0.0], &[0.5, 1.0]]);
        assert!(m.max_gram_identity_deviation() > 0.2);
        assert!(Mat::identity(5).max_gram_identity_deviation() == 0.0);
    }
}
