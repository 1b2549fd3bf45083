//! Exercises the C ABI exactly as a foreign caller would: raw pointers,
//! status codes, and caller-allocated buffers.

use graphwave_ffi::*;
use std::ptr;

fn grid_points(n_side: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..n_side {
        for j in 0..n_side {
            out.push(i as f64 * 0.4 + 0.013 * j as f64);
            out.push(j as f64 * 0.4);
            out.push(0.05 * ((i * n_side + j) as f64).sin());
        }
    }
    out
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let len = unsafe { gw_last_error_message(buf.as_mut_ptr() as *mut _, buf.len()) };
    let n = len.min(buf.len() - 1);
    String::from_utf8_lossy(&buf[..n]).into_owned()
}

#[test]
fn version_is_nul_terminated_semver() {
    let v = unsafe { std::ffi::CStr::from_ptr(gw_version()) };
    let s = v.to_str().unwrap();
    assert!(s.split('.').count() >= 3, "unexpected version {s}");
}

#[test]
fn full_pipeline_roundtrip_through_the_abi() {
    let xyz = grid_points(4); // 16 points
    let n = 16usize;

    let mut graph: *mut GwGraph = ptr::null_mut();
    let status = unsafe { gw_graph_build_knn(xyz.as_ptr(), n, 3, 0.0, &mut graph) };
    assert_eq!(status, GwStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { gw_graph_vertex_count(graph) }, n);

    let mut lap = vec![0.0; n * n];
    assert_eq!(
        unsafe { gw_graph_laplacian(graph, lap.as_mut_ptr()) },
        GwStatus::Ok
    );
    // normalized Laplacian has unit diagonal
    for i in 0..n {
        assert!((lap[i * n + i] - 1.0).abs() < 1e-12);
    }

    let mut basis: *mut GwBasis = ptr::null_mut();
    assert_eq!(
        unsafe { gw_graph_eigendecompose(graph, 1e-10, &mut basis) },
        GwStatus::Ok
    );
    assert_eq!(unsafe { gw_basis_size(basis) }, n);
    let mut evals = vec![0.0; n];
    assert_eq!(
        unsafe { gw_basis_eigenvalues(basis, evals.as_mut_ptr()) },
        GwStatus::Ok
    );
    assert!(evals[0].abs() < 1e-9);
    assert!(evals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert!(*evals.last().unwrap() <= 2.0 + 1e-9);

    let mut vecs = vec![0.0; n * n];
    assert_eq!(
        unsafe { gw_basis_eigenvectors(basis, vecs.as_mut_ptr()) },
        GwStatus::Ok
    );

    let mut frame: *mut GwFrame = ptr::null_mut();
    assert_eq!(
        unsafe { gw_frame_build(basis, GwKernelFamily::MexicanHat, 3, &mut frame) },
        GwStatus::Ok
    );
    let bands = unsafe { gw_frame_band_count(frame) };
    assert_eq!(bands, 4);
    assert!(unsafe { gw_frame_min_p(frame) } > 0.0);

    // forward + inverse roundtrip on a 2-channel signal
    let channels = 2usize;
    let signal: Vec<f64> = (0..n * channels).map(|i| ((i * 7 % 13) as f64) / 13.0 - 0.4).collect();
    let mut coeffs = vec![0.0; bands * n * channels];
    assert_eq!(
        unsafe { gw_wavelet_forward(frame, signal.as_ptr(), channels, coeffs.as_mut_ptr()) },
        GwStatus::Ok
    );
    let mut rec = vec![0.0; n * channels];
    assert_eq!(
        unsafe { gw_wavelet_inverse(frame, coeffs.as_ptr(), channels, rec.as_mut_ptr()) },
        GwStatus::Ok
    );
    let num: f64 = rec
        .iter()
        .zip(&signal)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num / den <= 1e-8, "roundtrip rel err {}", num / den);

    unsafe {
        gw_frame_free(frame);
        gw_basis_free(basis);
        gw_graph_free(graph);
    }
}

#[test]
fn status_codes_and_error_messages() {
    // k >= n is invalid input (status 2)
    let xyz = grid_points(2); // 4 points
    let mut graph: *mut GwGraph = ptr::null_mut();
    let status = unsafe { gw_graph_build_knn(xyz.as_ptr(), 4, 4, 0.0, &mut graph) };
    assert_eq!(status, GwStatus::InvalidInput);
    assert!(last_error().contains("k = 4"), "message: {}", last_error());

    // duplicate points make the sigma heuristic degenerate (status 3)
    let dup = vec![0.0; 6];
    let status = unsafe { gw_graph_build_knn(dup.as_ptr(), 2, 1, 0.0, &mut graph) };
    assert_eq!(status, GwStatus::MathFailure);

    // null pointers are reported as such
    let status = unsafe { gw_graph_build_knn(ptr::null(), 4, 2, 0.0, &mut graph) };
    assert_eq!(status, GwStatus::NullPointer);
    assert_eq!(unsafe { gw_graph_vertex_count(ptr::null()) }, 0);
    unsafe { gw_graph_free(ptr::null_mut()) }; // no-op
}

#[test]
fn orthogonal_construction_over_the_abi() {
    let q = [0.6f64, 0.8];
    let mut u = vec![0.0; 4];
    assert_eq!(
        unsafe { gw_orthogonal_from_vector(q.as_ptr(), 2, u.as_mut_ptr()) },
        GwStatus::Ok
    );
    assert!((u[0] - 0.6).abs() < 1e-15);
    assert!((u[1] + 0.8).abs() < 1e-15);
    assert!((u[2] - 0.8).abs() < 1e-15);
    assert!((u[3] - 0.6).abs() < 1e-15);

    // degenerate direction is a math failure (status 3)
    let e1 = [1.0f64, 0.0, 0.0];
    let mut u3 = vec![0.0; 9];
    assert_eq!(
        unsafe { gw_orthogonal_from_vector(e1.as_ptr(), 3, u3.as_mut_ptr()) },
        GwStatus::MathFailure
    );
    assert!(last_error().contains("degenerate"));

    // non-unit vector is rejected too
    let bad = [0.5f64, 0.5];
    assert_eq!(
        unsafe { gw_orthogonal_from_vector(bad.as_ptr(), 2, u.as_mut_ptr()) },
        GwStatus::MathFailure
    );
}
