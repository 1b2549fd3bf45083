//! C ABI for the graphwave toolkit.
//!
//! Conventions:
//! - Handles (`GwGraph`, `GwBasis`, `GwFrame`) are opaque; create them with
//!   the `gw_*_build` functions and release them with the matching `gw_*_free`.
//! - Every fallible call returns a [`GwStatus`]; on failure a thread-local
//!   message is retrievable via [`gw_last_error_message`]. Status codes match
//!   the CLI exit codes: 2 for invalid input, 3 for mathematical
//!   precondition failures.
//! - Matrices cross the boundary as dense row-major `double` buffers that the
//!   caller allocates; sizes are queried via the `*_count`/`*_size` getters.
//! - Point clouds are `n` consecutive `(x, y, z)` triples.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use graphwave::cloud::PointCloud;
use graphwave::graph::{build_knn_graph, eigendecompose, LocalGraph, SigmaMode, SpectralBasis};
use graphwave::linalg::Mat;
use graphwave::ortho::orthogonal_from_vector;
use graphwave::wavelets::{
    build_frame, inverse_wavelet_transform, select_scales_for, wavelet_transform, KernelFamily,
    WaveletCoefficients, WaveletFrame,
};
use graphwave::Error;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStatus {
    /// Success.
    Ok = 0,
    /// Invalid input: bad sizes, bad arguments, malformed data.
    InvalidInput = 2,
    /// A mathematical precondition failed (degenerate geometry, frame
    /// violation, non-convergence).
    MathFailure = 3,
    /// A required pointer argument was null.
    NullPointer = 4,
    /// A panic was caught at the boundary; state may be stale.
    Internal = 5,
}

/// Wavelet kernel family selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwKernelFamily {
    MexicanHat = 0,
    Meyer = 1,
}

/// Opaque handle to a k-NN local graph.
pub struct GwGraph(LocalGraph);
/// Opaque handle to a spectral basis.
pub struct GwBasis(SpectralBasis);
/// Opaque handle to a wavelet frame.
pub struct GwFrame(WaveletFrame);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GwStatus {
    if err.is_math_failure() {
        GwStatus::MathFailure
    } else {
        GwStatus::InvalidInput
    }
}

/// Run a fallible body with panic containment.
fn guarded(body: impl FnOnce() -> Result<(), (GwStatus, String)>) -> GwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic at FFI boundary".to_string());
            set_error(&msg);
            GwStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (GwStatus, String) {
    (status_of(&e), e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gw_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null (in which
/// case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn gw_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Build a symmetrized k-NN graph with Gaussian edge weights from `n_points`
/// xyz triples. `sigma <= 0` selects the mean k-NN distance heuristic.
///
/// # Safety
/// `xyz` must point to `3 * n_points` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gw_graph_build_knn(
    xyz: *const f64,
    n_points: usize,
    k: usize,
    sigma: f64,
    out: *mut *mut GwGraph,
) -> GwStatus {
    if out.is_null() || xyz.is_null() {
        set_error("null pointer argument");
        return GwStatus::NullPointer;
    }
    let coords = std::slice::from_raw_parts(xyz, 3 * n_points);
    guarded(|| {
        let positions: Vec<[f64; 3]> = coords
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let pc = PointCloud::from_positions(positions);
        let mode = if sigma > 0.0 {
            SigmaMode::Fixed(sigma)
        } else {
            SigmaMode::MeanKnnDist
        };
        let graph = build_knn_graph(&pc, k, mode).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GwGraph(graph)));
        Ok(())
    })
}

/// Release a graph handle. Null is ignored.
///
/// # Safety
/// `graph` must come from [`gw_graph_build_knn`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gw_graph_free(graph: *mut GwGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Vertex count of a graph; 0 when the handle is null.
///
/// # Safety
/// `graph` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_graph_vertex_count(graph: *const GwGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.n)
}

/// Copy the normalized Laplacian into `out` (row-major `n * n`).
///
/// # Safety
/// `out` must point to `n * n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_graph_laplacian(graph: *const GwGraph, out: *mut f64) -> GwStatus {
    let Some(g) = graph.as_ref() else {
        set_error("null graph handle");
        return GwStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return GwStatus::NullPointer;
    }
    let n = g.0.n;
    let dst = std::slice::from_raw_parts_mut(out, n * n);
    dst.copy_from_slice(g.0.laplacian.as_slice());
    GwStatus::Ok
}

/// Eigendecompose a graph's normalized Laplacian.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gw_graph_eigendecompose(
    graph: *const GwGraph,
    tol: f64,
    out: *mut *mut GwBasis,
) -> GwStatus {
    let Some(g) = graph.as_ref() else {
        set_error("null graph handle");
        return GwStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return GwStatus::NullPointer;
    }
    guarded(|| {
        let basis = eigendecompose(&g.0.laplacian, tol).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GwBasis(basis)));
        Ok(())
    })
}

/// Release a basis handle. Null is ignored.
///
/// # Safety
/// `basis` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gw_basis_free(basis: *mut GwBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Dimension of a basis; 0 when the handle is null.
///
/// # Safety
/// `basis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_basis_size(basis: *const GwBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.n())
}

/// Copy the ascending eigenvalues into `out` (`n` doubles).
///
/// # Safety
/// `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_basis_eigenvalues(basis: *const GwBasis, out: *mut f64) -> GwStatus {
    let Some(b) = basis.as_ref() else {
        set_error("null basis handle");
        return GwStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return GwStatus::NullPointer;
    }
    let dst = std::slice::from_raw_parts_mut(out, b.0.n());
    dst.copy_from_slice(&b.0.eigenvalues);
    GwStatus::Ok
}

/// Copy the eigenvector matrix into `out` (row-major `n * n`, columns are
/// eigenvectors).
///
/// # Safety
/// `out` must point to `n * n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_basis_eigenvectors(basis: *const GwBasis, out: *mut f64) -> GwStatus {
    let Some(b) = basis.as_ref() else {
        set_error("null basis handle");
        return GwStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return GwStatus::NullPointer;
    }
    let n = b.0.n();
    let dst = std::slice::from_raw_parts_mut(out, n * n);
    dst.copy_from_slice(b.0.eigenvectors.as_slice());
    GwStatus::Ok
}

/// Closed-form orthogonal completion of a unit vector `q` (length `n`),
/// written row-major into `out_u` (`n * n`). The first column equals `q`.
/// Fails when `q` is not normalized or lies within 1e-6 of +/- e1.
///
/// # Safety
/// `q` must point to `n` doubles and `out_u` to `n * n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_orthogonal_from_vector(
    q: *const f64,
    n: usize,
    out_u: *mut f64,
) -> GwStatus {
    if q.is_null() || out_u.is_null() {
        set_error("null pointer argument");
        return GwStatus::NullPointer;
    }
    let qs = std::slice::from_raw_parts(q, n);
    let dst = std::slice::from_raw_parts_mut(out_u, n * n);
    guarded(|| {
        let u: Mat = orthogonal_from_vector(qs).map_err(lib_err)?;
        dst.copy_from_slice(u.as_slice());
        Ok(())
    })
}

fn family_of(f: GwKernelFamily) -> KernelFamily {
    match f {
        GwKernelFamily::MexicanHat => KernelFamily::MexicanHat,
        GwKernelFamily::Meyer => KernelFamily::Meyer,
    }
}

/// Build a wavelet frame over a basis: one scaling band plus `j_scales`
/// wavelet bands at the default log-spaced scale placement.
///
/// # Safety
/// `basis` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gw_frame_build(
    basis: *const GwBasis,
    family: GwKernelFamily,
    j_scales: usize,
    out: *mut *mut GwFrame,
) -> GwStatus {
    let Some(b) = basis.as_ref() else {
        set_error("null basis handle");
        return GwStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return GwStatus::NullPointer;
    }
    if j_scales == 0 {
        set_error("j_scales must be >= 1");
        return GwStatus::InvalidInput;
    }
    guarded(|| {
        let fam = family_of(family);
        let scales = select_scales_for(fam, 2.0, j_scales);
        let frame = build_frame(&b.0, fam.kernels(), &scales).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GwFrame(frame)));
        Ok(())
    })
}

/// Release a frame handle. Null is ignored.
///
/// # Safety
/// `frame` must come from [`gw_frame_build`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gw_frame_free(frame: *mut GwFrame) {
    if !frame.is_null() {
        drop(Box::from_raw(frame));
    }
}

/// Number of bands (1 + J); 0 when the handle is null.
///
/// # Safety
/// `frame` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_frame_band_count(frame: *const GwFrame) -> usize {
    frame.as_ref().map_or(0, |f| 1 + f.0.num_scales())
}

/// Minimum frame value `p(lambda_i)` over the basis eigenvalues; stability
/// of the inverse transform requires this to stay well above zero.
///
/// # Safety
/// `frame` must be a live handle or null (returns 0 for null).
#[no_mangle]
pub unsafe extern "C" fn gw_frame_min_p(frame: *const GwFrame) -> f64 {
    frame.as_ref().map_or(0.0, |f| {
        f.0.frame_values.iter().copied().fold(f64::INFINITY, f64::min)
    })
}

/// Forward transform of an `n x channels` signal: writes `bands * n *
/// channels` doubles (band-major, then row-major per band).
///
/// # Safety
/// `signal` must hold `n * channels` doubles; `out` must hold
/// `(1 + J) * n * channels` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_wavelet_forward(
    frame: *const GwFrame,
    signal: *const f64,
    channels: usize,
    out: *mut f64,
) -> GwStatus {
    let Some(f) = frame.as_ref() else {
        set_error("null frame handle");
        return GwStatus::NullPointer;
    };
    if signal.is_null() || out.is_null() {
        set_error("null buffer argument");
        return GwStatus::NullPointer;
    }
    if channels == 0 {
        set_error("channels must be >= 1");
        return GwStatus::InvalidInput;
    }
    let n = f.0.n();
    let bands = 1 + f.0.num_scales();
    let src = std::slice::from_raw_parts(signal, n * channels);
    let dst = std::slice::from_raw_parts_mut(out, bands * n * channels);
    guarded(|| {
        let sig = Mat::from_vec(n, channels, src.to_vec());
        let coeffs = wavelet_transform(&f.0, &sig).map_err(lib_err)?;
        for (band, block) in coeffs.coeffs.iter().enumerate() {
            let offset = band * n * channels;
            dst[offset..offset + n * channels].copy_from_slice(block.as_slice());
        }
        Ok(())
    })
}

/// Least-squares inverse transform of stacked coefficients (layout as in
/// [`gw_wavelet_forward`]): writes the reconstructed `n * channels` signal.
///
/// # Safety
/// `coeffs` must hold `(1 + J) * n * channels` doubles; `out` must hold
/// `n * channels` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_wavelet_inverse(
    frame: *const GwFrame,
    coeffs: *const f64,
    channels: usize,
    out: *mut f64,
) -> GwStatus {
    let Some(f) = frame.as_ref() else {
        set_error("null frame handle");
        return GwStatus::NullPointer;
    };
    if coeffs.is_null() || out.is_null() {
        set_error("null buffer argument");
        return GwStatus::NullPointer;
    }
    if channels == 0 {
        set_error("channels must be >= 1");
        return GwStatus::InvalidInput;
    }
    let n = f.0.n();
    let bands = 1 + f.0.num_scales();
    let src = std::slice::from_raw_parts(coeffs, bands * n * channels);
    let dst = std::slice::from_raw_parts_mut(out, n * channels);
    guarded(|| {
        let blocks: Vec<Mat> = (0..bands)
            .map(|b| {
                Mat::from_vec(
                    n,
                    channels,
                    src[b * n * channels..(b + 1) * n * channels].to_vec(),
                )
            })
            .collect();
        let wc = WaveletCoefficients {
            coeffs: blocks,
            frame_id: f.0.id,
        };
        let rec = inverse_wavelet_transform(&f.0, &wc).map_err(lib_err)?;
        dst.copy_from_slice(rec.as_slice());
        Ok(())
    })
}
