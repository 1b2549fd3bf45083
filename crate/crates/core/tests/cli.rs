//! End-to-end tests of the `graphwave` binary: artifacts, manifests, and the
//! 0/2/3 exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphwave"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_xyz(dir: &Path, name: &str, points: &[[f64; 3]]) -> PathBuf {
    let path = dir.join(name);
    let mut body = String::new();
    for p in points {
        body.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    std::fs::write(&path, body).unwrap();
    path
}

fn manifest_of(dir: &Path) -> serde_json::Value {
    let body = std::fs::read_to_string(dir.join("manifest.json")).expect("manifest.json exists");
    serde_json::from_str(&body).expect("manifest parses")
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let body = std::fs::read_to_string(path).unwrap();
    body.lines()
        .skip(1)
        .map(|l| l.split(',').map(|t| t.parse::<f64>().unwrap()).collect())
        .collect()
}

#[test]
fn graph_two_points_single_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = write_xyz(tmp.path(), "two.xyz", &[[0.0; 3], [1.0, 0.0, 0.0]]);
    let out_dir = tmp.path().join("g");
    let out = run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("graph.json")).unwrap())
            .unwrap();
    assert_eq!(doc["n"], 2);
    assert_eq!(doc["edges"].as_array().unwrap().len(), 1);
    let manifest = manifest_of(&out_dir);
    assert_eq!(manifest["command"], "graph");
}

#[test]
fn graph_k_too_large_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = write_xyz(tmp.path(), "two.xyz", &[[0.0; 3], [1.0, 0.0, 0.0]]);
    let out = run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "2",
        "--out",
        tmp.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("1 <= k < n"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn spectrum_two_node_graph_and_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = write_xyz(tmp.path(), "two.xyz", &[[0.0; 3], [0.3, 0.0, 0.0]]);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "1",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let s_dir = tmp.path().join("s");
    let out = run(&[
        "spectrum",
        g_dir.join("graph.json").to_str().unwrap(),
        "--out",
        s_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // a single weighted edge always normalizes to eigenvalues {0, 2}
    let rows = csv_rows(&s_dir.join("eigenvalues.csv"));
    assert!(rows[0][1].abs() < 1e-12);
    assert!((rows[1][1] - 2.0).abs() < 1e-12);
    assert!(s_dir.join("basis.bin").is_file());
}

#[test]
fn spectrum_disconnected_pairs_two_leading_zeros() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = write_xyz(
        tmp.path(),
        "pairs.xyz",
        &[
            [0.0; 3],
            [0.1, 0.0, 0.0],
            [10.0, 0.0, 0.0],
            [10.1, 0.0, 0.0],
        ],
    );
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "1",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let s_dir = tmp.path().join("s");
    assert!(run(&[
        "spectrum",
        g_dir.join("graph.json").to_str().unwrap(),
        "--out",
        s_dir.to_str().unwrap()
    ])
    .status
    .success());
    let rows = csv_rows(&s_dir.join("eigenvalues.csv"));
    assert!(rows[0][1].abs() < 1e-10);
    assert!(rows[1][1].abs() < 1e-10, "second zero missing: {rows:?}");
    assert!(rows[2][1] > 1e-6);
}

#[test]
fn spectrum_regular_tetrahedron_is_k4() {
    let tmp = tempfile::tempdir().unwrap();
    // regular tetrahedron: all pairwise distances equal, so k = 3 builds K4
    // with uniform weights
    let xyz = write_xyz(
        tmp.path(),
        "tetra.xyz",
        &[
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ],
    );
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "3",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let s_dir = tmp.path().join("s");
    assert!(run(&[
        "spectrum",
        g_dir.join("graph.json").to_str().unwrap(),
        "--out",
        s_dir.to_str().unwrap()
    ])
    .status
    .success());
    let rows = csv_rows(&s_dir.join("eigenvalues.csv"));
    let expect = [0.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0];
    for (row, want) in rows.iter().zip(expect) {
        assert!((row[1] - want).abs() < 1e-9, "got {} want {want}", row[1]);
    }
}

fn seeded_cloud_xyz(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    write_xyz(dir, "cloud.xyz", &pts)
}

#[test]
fn wavelet_forward_inverse_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = seeded_cloud_xyz(tmp.path(), 20, 5);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "3",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());

    // constant signal plus a bump
    let mut signal = String::from("ch0\n");
    for i in 0..20 {
        signal.push_str(&format!("{}\n", if i == 3 { 2.0 } else { 0.25 }));
    }
    let sig_path = tmp.path().join("sig.csv");
    std::fs::write(&sig_path, signal).unwrap();

    let w_dir = tmp.path().join("w");
    let fwd = run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        sig_path.to_str().unwrap(),
        "--j",
        "3",
        "--out",
        w_dir.to_str().unwrap(),
    ]);
    assert!(fwd.status.success(), "{}", stderr_of(&fwd));
    // forward run reports its own round-trip error
    let line = stdout_of(&fwd);
    let err: f64 = line
        .split("roundtrip_rel_err=")
        .nth(1)
        .expect("roundtrip printed")
        .trim()
        .parse()
        .unwrap();
    assert!(err <= 1e-8, "roundtrip error {err}");

    // feed the coefficients back through --inverse
    let r_dir = tmp.path().join("r");
    let inv = run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        w_dir.join("coefficients.csv").to_str().unwrap(),
        "--j",
        "3",
        "--inverse",
        "--out",
        r_dir.to_str().unwrap(),
    ]);
    assert!(inv.status.success(), "{}", stderr_of(&inv));
    let rec = csv_rows(&r_dir.join("reconstruction.csv"));
    for (i, row) in rec.iter().enumerate() {
        let want = if i == 3 { 2.0 } else { 0.25 };
        assert!((row[1] - want).abs() < 1e-8, "vertex {i}: {} vs {want}", row[1]);
    }
}

#[test]
fn wavelet_constant_signal_band_rows_vanish_on_regular_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = write_xyz(
        tmp.path(),
        "tetra.xyz",
        &[
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ],
    );
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "3",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let sig_path = tmp.path().join("ones.csv");
    std::fs::write(&sig_path, "ch0\n1\n1\n1\n1\n").unwrap();
    let w_dir = tmp.path().join("w");
    assert!(run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        sig_path.to_str().unwrap(),
        "--j",
        "2",
        "--out",
        w_dir.to_str().unwrap(),
    ])
    .status
    .success());
    let rows = csv_rows(&w_dir.join("coefficients.csv"));
    for row in rows.iter().filter(|r| r[0] > 0.0) {
        assert!(row[2].abs() < 1e-10, "band-pass row {row:?} should vanish");
    }
}

#[test]
fn wavelet_cheby_mode_reports_deviation() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = seeded_cloud_xyz(tmp.path(), 24, 9);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "4",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let mut signal = String::from("ch0\n");
    for i in 0..24 {
        signal.push_str(&format!("{}\n", ((i * 13 % 7) as f64) / 7.0 - 0.4));
    }
    let sig_path = tmp.path().join("sig.csv");
    std::fs::write(&sig_path, signal).unwrap();

    let parse_dev = |out: &Output| -> f64 {
        stdout_of(out)
            .split("max_dev_vs_exact=")
            .nth(1)
            .expect("deviation printed")
            .trim()
            .parse()
            .unwrap()
    };
    let c10 = run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        sig_path.to_str().unwrap(),
        "--j",
        "3",
        "--mode",
        "cheby:10",
        "--out",
        tmp.path().join("c10").to_str().unwrap(),
    ]);
    assert!(c10.status.success(), "{}", stderr_of(&c10));
    let c50 = run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        sig_path.to_str().unwrap(),
        "--j",
        "3",
        "--mode",
        "cheby:50",
        "--out",
        tmp.path().join("c50").to_str().unwrap(),
    ]);
    assert!(c50.status.success(), "{}", stderr_of(&c50));
    let (d10, d50) = (parse_dev(&c10), parse_dev(&c50));
    assert!(
        d50 * 10.0 <= d10,
        "cheby:50 deviation {d50:.3e} should be far below cheby:10 {d10:.3e}"
    );
}

#[test]
fn localize_columns_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = seeded_cloud_xyz(tmp.path(), 64, 97);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "8",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let l_dir = tmp.path().join("l");
    let out = run(&[
        "localize",
        g_dir.join("graph.json").to_str().unwrap(),
        "--vertex",
        "0",
        "--modes",
        "fourier,scaling,wavelet:1,wavelet:3",
        "--j",
        "3",
        "--out",
        l_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let body = std::fs::read_to_string(l_dir.join("localize.csv")).unwrap();
    let header = body.lines().next().unwrap();
    assert_eq!(header, "vertex,fourier,scaling,wavelet_1,wavelet_3");
    assert_eq!(body.lines().count(), 65); // header + 64 vertices

    // summary echoes the localization ordering for this seeded graph
    let summary = stdout_of(&out);
    let grab = |tag: &str| -> f64 {
        summary
            .split(tag)
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let s1 = grab("s1=");
    let sj = grab("sJ=");
    assert!(s1 > sj, "2-hop energy ordering violated: {s1} vs {sj}");
}

#[test]
fn localize_vertex_out_of_range_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let xyz = seeded_cloud_xyz(tmp.path(), 8, 3);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "2",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let out = run(&[
        "localize",
        g_dir.join("graph.json").to_str().unwrap(),
        "--vertex",
        "99",
        "--out",
        tmp.path().join("l").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn framecheck_default_passes_adversarial_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let ok_dir = tmp.path().join("ok");
    let out = run(&["framecheck", "--out", ok_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("min_p="));
    let body = std::fs::read_to_string(ok_dir.join("framecheck.csv")).unwrap();
    assert!(body.starts_with("lambda,h_sq,g_sq_1,g_sq_2,g_sq_3,g_sq_4,g_sq_5,p"));

    // a lone vanishing scale leaves the upper spectrum uncovered
    let bad_dir = tmp.path().join("bad");
    let out = run(&[
        "framecheck",
        "--lambda-max",
        "40",
        "--scales",
        "1e-9",
        "--out",
        bad_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr_of(&out).contains("frame violation"),
        "stderr: {}",
        stderr_of(&out)
    );
}

fn tiny_train_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "dataset": {
            "train_per_class": 6,
            "test_per_class": 2,
            "points": 48,
            "noise_sigma": 0.02,
            "seed": 11
        },
        "net": {
            "sa": [
                {"centroids": 12, "k": 4, "out_channels": 16},
                {"centroids": 1, "k": 4, "out_channels": 32}
            ],
            "encoders": 1,
            "heads": 2,
            "j_scales": 2,
            "kernel": "mexican-hat",
            "cheb_degree": 6,
            "head_hidden": 16,
            "classes": 3
        },
        "train": {
            "variant": "l",
            "epochs": 2,
            "batch_size": 4,
            "lr": 0.005,
            "momentum": 0.9,
            "beta": null,
            "seed": 5,
            "early_stop_acc": null
        }
    });
    let path = dir.join("train.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_variant_l_logs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(tmp.path());
    let run_once = |dir: &Path| -> String {
        let out = run(&[
            "train",
            "--variant",
            "l",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
        std::fs::read_to_string(dir.join("metrics.csv")).unwrap()
    };
    let a = run_once(&tmp.path().join("a"));
    let b = run_once(&tmp.path().join("b"));
    assert_eq!(a, b, "seed-fixed reruns must be bitwise identical");

    let header = a.lines().next().unwrap();
    assert_eq!(header, "epoch,task_loss,reg_wf1,train_acc,test_acc");
    assert_eq!(a.lines().count(), 3); // header + 2 epochs
    assert!(tmp.path().join("a/checkpoint.bin").is_file());
    let manifest = manifest_of(&tmp.path().join("a"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn train_variant_u_logs_orthogonality_penalty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(tmp.path());
    let dir = tmp.path().join("u");
    let out = run(&[
        "train",
        "--variant",
        "u",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,task_loss,reg_wf1,train_acc,test_acc"));
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    let reg_first: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert!(reg_first > 0.0, "penalty should start positive");
}

#[test]
fn train_checkpoint_feeds_wavelet_ortho_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(tmp.path());
    let t_dir = tmp.path().join("t");
    assert!(run(&[
        "train",
        "--variant",
        "l",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        t_dir.to_str().unwrap(),
    ])
    .status
    .success());

    // a 12-vertex graph matches the trained first-block basis
    let xyz = seeded_cloud_xyz(tmp.path(), 12, 21);
    let g_dir = tmp.path().join("g");
    assert!(run(&[
        "graph",
        xyz.to_str().unwrap(),
        "--k",
        "3",
        "--out",
        g_dir.to_str().unwrap()
    ])
    .status
    .success());
    let mut signal = String::from("ch0\n");
    for i in 0..12 {
        signal.push_str(&format!("{}\n", i as f64 * 0.1));
    }
    let sig = tmp.path().join("sig.csv");
    std::fs::write(&sig, signal).unwrap();

    let w_dir = tmp.path().join("w");
    let mode = format!("ortho:{}", t_dir.join("checkpoint.bin").display());
    let out = run(&[
        "wavelet",
        g_dir.join("graph.json").to_str().unwrap(),
        "--signal",
        sig.to_str().unwrap(),
        "--j",
        "2",
        "--mode",
        &mode,
        "--out",
        w_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    // the learned frame still reconstructs exactly on its own range
    let err: f64 = stdout_of(&out)
        .split("roundtrip_rel_err=")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(err <= 1e-8);

    // size mismatch is an input error
    let xyz_bad = write_xyz(tmp.path(), "five.xyz", &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.5, 1.0]]);
    let g2 = tmp.path().join("g2");
    assert!(run(&["graph", xyz_bad.to_str().unwrap(), "--k", "2", "--out", g2.to_str().unwrap()]).status.success());
    let out = run(&[
        "wavelet",
        g2.join("graph.json").to_str().unwrap(),
        "--signal",
        sig.to_str().unwrap(),
        "--mode",
        &mode,
        "--out",
        tmp.path().join("w2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ortho_selftest_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("report");
    let out = run(&[
        "ortho-selftest",
        "--n",
        "16",
        "--trials",
        "50",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("PASS"));
    assert!(text.contains("correctly rejected"));
    assert!(text.contains("row sum"));
    assert!(dir.join("report.txt").is_file());
    assert!(dir.join("manifest.json").is_file());
}
