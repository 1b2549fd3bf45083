//! Property tests over randomized inputs: structural invariants that must
//! hold for any point cloud, graph, or signal, not just the seeded fixtures.

use proptest::prelude::*;

use graphwave::cloud::{load_xyz, normalize_unit_sphere, save_xyz, PointCloud};
use graphwave::graph::{build_knn_graph, eigendecompose, SigmaMode};
use graphwave::linalg::Mat;
use graphwave::wavelets::{
    build_frame, graph_fourier, inverse_graph_fourier, inverse_wavelet_transform, select_scales,
    wavelet_transform, KernelFamily,
};

fn arb_cloud(max_n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    proptest::collection::vec(
        (
            -10.0..10.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
        )
            .prop_map(|(x, y, z)| [x, y, z]),
        4..max_n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn xyz_roundtrip_is_bit_exact(points in arb_cloud(32)) {
        let pc = PointCloud::from_positions(points);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_xyz(&pc, tmp.path()).unwrap();
        let back = load_xyz(tmp.path()).unwrap();
        prop_assert_eq!(back.positions, pc.positions);
    }

    #[test]
    fn normalization_centers_scales_and_is_idempotent(points in arb_cloud(32)) {
        let pc = PointCloud::from_positions(points);
        let Ok(once) = normalize_unit_sphere(&pc) else {
            // all-coincident clouds are the only rejection
            return Ok(());
        };
        let c = once.centroid();
        prop_assert!(c.iter().all(|v| v.abs() < 1e-9));
        prop_assert!((once.max_radius() - 1.0).abs() < 1e-9);
        let twice = normalize_unit_sphere(&once).unwrap();
        for (a, b) in once.positions.iter().zip(&twice.positions) {
            for d in 0..3 {
                prop_assert!((a[d] - b[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn knn_graph_structural_invariants(points in arb_cloud(24), k in 1usize..4) {
        let pc = PointCloud::from_positions(points);
        let n = pc.len();
        prop_assume!(k < n);
        let graph = match build_knn_graph(&pc, k, SigmaMode::MeanKnnDist) {
            Ok(g) => g,
            Err(_) => return Ok(()), // duplicate points: sigma degenerates
        };
        prop_assert!(graph.adjacency.max_asymmetry() < 1e-12);
        for i in 0..n {
            prop_assert_eq!(graph.adjacency.get(i, i), 0.0);
            prop_assert!(graph.degree[i] > 0.0);
        }
        let basis = eigendecompose(&graph.laplacian, 1e-10).unwrap();
        prop_assert!(basis.eigenvalues[0] > -1e-9);
        prop_assert!(basis.lambda_max() < 2.0 + 1e-9);
    }

    #[test]
    fn fourier_is_an_isometry(points in arb_cloud(20), raw in proptest::collection::vec(-5.0..5.0f64, 40)) {
        let pc = PointCloud::from_positions(points);
        let n = pc.len();
        prop_assume!(n >= 5);
        let graph = match build_knn_graph(&pc, 2, SigmaMode::MeanKnnDist) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let basis = eigendecompose(&graph.laplacian, 1e-10).unwrap();
        let f = Mat::from_vec(n, 1, raw[..n].to_vec());
        let fhat = graph_fourier(&basis, &f).unwrap();
        prop_assert!((fhat.frobenius_norm() - f.frobenius_norm()).abs() < 1e-10);
        let back = inverse_graph_fourier(&basis, &fhat).unwrap();
        prop_assert!(back.sub(&f).max_abs() < 1e-10);
    }

    #[test]
    fn wavelet_roundtrip_on_arbitrary_graphs(
        points in arb_cloud(20),
        raw in proptest::collection::vec(-5.0..5.0f64, 40),
        j in 1usize..4,
        meyer in any::<bool>(),
    ) {
        let pc = PointCloud::from_positions(points);
        let n = pc.len();
        prop_assume!(n >= 5);
        let graph = match build_knn_graph(&pc, 2, SigmaMode::MeanKnnDist) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let family = if meyer { KernelFamily::Meyer } else { KernelFamily::MexicanHat };
        let basis = eigendecompose(&graph.laplacian, 1e-10).unwrap();
        let scales = graphwave::wavelets::select_scales_for(family, 2.0, j);
        let frame = build_frame(&basis, family.kernels(), &scales).unwrap();
        let f = Mat::from_vec(n, 1, raw[..n].to_vec());
        prop_assume!(f.frobenius_norm() > 1e-6);
        let coeffs = wavelet_transform(&frame, &f).unwrap();
        let rec = inverse_wavelet_transform(&frame, &coeffs).unwrap();
        let rel = rec.sub(&f).frobenius_norm() / f.frobenius_norm();
        prop_assert!(rel <= 1e-8, "rel {}", rel);
    }

    #[test]
    fn transforms_are_linear(
        points in arb_cloud(16),
        raw in proptest::collection::vec(-3.0..3.0f64, 64),
        alpha in -2.0..2.0f64,
        beta in -2.0..2.0f64,
    ) {
        let pc = PointCloud::from_positions(points);
        let n = pc.len();
        prop_assume!(n >= 5 && raw.len() >= 2 * n);
        let graph = match build_knn_graph(&pc, 2, SigmaMode::MeanKnnDist) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let basis = eigendecompose(&graph.laplacian, 1e-10).unwrap();
        let frame = build_frame(
            &basis,
            KernelFamily::MexicanHat.kernels(),
            &select_scales(2.0, 2),
        )
        .unwrap();
        let f = Mat::from_vec(n, 1, raw[..n].to_vec());
        let g = Mat::from_vec(n, 1, raw[n..2 * n].to_vec());
        let combo = f.scale(alpha).add(&g.scale(beta));
        let t_combo = wavelet_transform(&frame, &combo).unwrap();
        let tf = wavelet_transform(&frame, &f).unwrap();
        let tg = wavelet_transform(&frame, &g).unwrap();
        for band in 0..t_combo.coeffs.len() {
            let lin = tf.coeffs[band].scale(alpha).add(&tg.coeffs[band].scale(beta));
            prop_assert!(t_combo.coeffs[band].sub(&lin).max_abs() < 1e-10);
        }
    }
}
