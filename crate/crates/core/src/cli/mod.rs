//! The `graphwave` command-line surface.
//!
//! Every command treats its output flag as a directory, writes fixed-name
//! artifacts inside it, and drops a `manifest.json` sufficient to re-run the
//! command. Exit codes: 0 on success, 2 on input errors, 3 on mathematical
//! precondition failures.

mod io;

pub use io::{
    load_basis, load_graph_json, load_numeric_csv, load_signal_csv, save_basis, save_graph_json,
    signal_csv, EdgeRecord, GraphDocument,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::load_xyz;
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, eigendecompose, SigmaMode, SpectralBasis};
use crate::linalg::Mat;
use crate::nn::{
    self, checkpoint, synth_dataset, NetConfig, SynthDatasetConfig, TrainConfig, Variant,
};
use crate::ortho::{orthogonal_from_vector, realize_basis, synth_laplacian, OrthoParam};
use crate::wavelets::{
    build_frame, energy_fraction_within_hops, frame_check, impulse_response, linspace,
    select_scales_for, wavelet_transform, ImpulseMode, KernelFamily, WaveletCoefficients,
    WaveletFrame,
};

/// Spectral graph wavelet toolkit for 3D point clouds.
#[derive(Debug, Parser)]
#[command(name = "graphwave", version, about)]
pub struct Cli {
    /// Worker thread count (also via GRAPHWAVE_THREADS). The current
    /// implementation computes serially regardless, so every run is
    /// bitwise reproducible; the value is recorded in the manifest.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a k-NN graph with Gaussian weights from an XYZ point cloud.
    Graph {
        /// Input .xyz file (one `x y z` per line).
        input: PathBuf,
        /// Neighbors per point.
        #[arg(long, default_value_t = 8)]
        k: usize,
        /// Fixed Gaussian kernel width; defaults to the mean k-NN distance.
        #[arg(long)]
        sigma: Option<f64>,
        /// Output directory (writes graph.json + manifest.json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Eigendecompose a graph's normalized Laplacian.
    Spectrum {
        /// Input graph.json.
        input: PathBuf,
        /// Output directory (writes eigenvalues.csv, basis.bin, manifest.json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward or inverse graph wavelet transform of a signal.
    Wavelet {
        /// Input graph.json or basis.bin.
        input: PathBuf,
        /// Signal CSV (forward: n rows x c channels; with --inverse: the
        /// coefficients.csv produced by a forward run).
        #[arg(long)]
        signal: PathBuf,
        /// Kernel family: mexican-hat or meyer.
        #[arg(long, default_value = "mexican-hat")]
        family: String,
        /// Number of wavelet scales.
        #[arg(long, default_value_t = 5)]
        j: usize,
        /// Basis mode: `exact`, `ortho:<checkpoint.bin>`, or `cheby:<K>`.
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Treat the signal as coefficients and reconstruct.
        #[arg(long)]
        inverse: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-vertex impulse-response magnitudes for selected operators.
    Localize {
        /// Input graph.json.
        input: PathBuf,
        /// Impulse vertex.
        #[arg(long)]
        vertex: usize,
        /// Comma-separated modes: fourier, scaling, wavelet:<j>.
        #[arg(long, default_value = "fourier,scaling,wavelet:1")]
        modes: String,
        /// Number of wavelet scales in the frame.
        #[arg(long, default_value_t = 3)]
        j: usize,
        /// Kernel family.
        #[arg(long, default_value = "mexican-hat")]
        family: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the frame function p over a spectral grid.
    Framecheck {
        /// Kernel family.
        #[arg(long, default_value = "mexican-hat")]
        family: String,
        /// Number of wavelet scales.
        #[arg(long, default_value_t = 5)]
        j: usize,
        /// Upper end of the sampled spectrum.
        #[arg(long, default_value_t = 2.0)]
        lambda_max: f64,
        /// Number of grid samples.
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        /// Explicit comma-separated scales overriding the default placement.
        #[arg(long)]
        scales: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy classifier on the synthetic sphere/cube/torus dataset.
    Train {
        /// Variant: exact, l, u, or che.
        #[arg(long, default_value = "l")]
        variant: String,
        /// JSON config file overriding the defaults (see README).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (metrics.csv, checkpoint.bin, manifest.json).
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Self-test of the closed-form orthogonal construction.
    OrthoSelftest {
        /// Largest dimension to test (powers of 4 up to this bound).
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Random trials per dimension.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Optional output directory for the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What a command run records next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_ms: u128,
    pub threads: usize,
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)?;
    io::write_text(path, &body)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn parse_family(s: &str) -> Result<KernelFamily> {
    match s {
        "mexican-hat" | "mexican_hat" | "mexicanhat" => Ok(KernelFamily::MexicanHat),
        "meyer" => Ok(KernelFamily::Meyer),
        other => Err(Error::InvalidArgument(format!(
            "unknown kernel family `{other}` (expected mexican-hat or meyer)"
        ))),
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s.to_ascii_lowercase().as_str() {
        "exact" => Ok(Variant::Exact),
        "l" => Ok(Variant::L),
        "u" => Ok(Variant::U),
        "che" => Ok(Variant::Che),
        other => Err(Error::InvalidArgument(format!(
            "unknown variant `{other}` (expected exact|l|u|che)"
        ))),
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("GRAPHWAVE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let threads = resolve_threads(cli.threads);
    let started = Instant::now();
    let result = match &cli.command {
        Command::Graph { input, k, sigma, out } => cmd_graph(input, *k, *sigma, out, threads, started),
        Command::Spectrum { input, out } => cmd_spectrum(input, out, threads, started),
        Command::Wavelet {
            input,
            signal,
            family,
            j,
            mode,
            inverse,
            out,
        } => cmd_wavelet(input, signal, family, *j, mode, *inverse, out, threads, started),
        Command::Localize {
            input,
            vertex,
            modes,
            j,
            family,
            out,
        } => cmd_localize(input, *vertex, modes, *j, family, out, threads, started),
        Command::Framecheck {
            family,
            j,
            lambda_max,
            grid,
            scales,
            out,
        } => cmd_framecheck(family, *j, *lambda_max, *grid, scales.as_deref(), out, threads, started),
        Command::Train {
            variant,
            config,
            out_dir,
            epochs,
            seed,
        } => cmd_train(variant, config.as_deref(), out_dir, *epochs, *seed, threads, started),
        Command::OrthoSelftest { n, trials, seed, out } => {
            cmd_ortho_selftest(*n, *trials, *seed, out.as_deref(), threads, started)
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_math_failure() {
                3
            } else {
                2
            }
        }
    }
}

/// Parse command-line arguments and run; convenience for `main`.
pub fn main_entry() -> i32 {
    run(Cli::parse())
}

#[allow(clippy::too_many_arguments)]
fn cmd_graph(
    input: &Path,
    k: usize,
    sigma: Option<f64>,
    out: &Path,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let pc = load_xyz(input)?;
    let mode = match sigma {
        Some(s) => SigmaMode::Fixed(s),
        None => SigmaMode::MeanKnnDist,
    };
    let graph = build_knn_graph(&pc, k, mode)?;
    ensure_dir(out)?;
    let doc = GraphDocument::from_graph(&graph);
    save_graph_json(out.join("graph.json"), &doc)?;
    println!(
        "graph: {} vertices, {} edges, mean degree {:.3}",
        doc.n,
        doc.edges.len(),
        doc.degree.iter().sum::<f64>() / doc.n as f64
    );
    write_manifest(
        out,
        &RunManifest {
            command: "graph".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({"k": k, "sigma": sigma}),
            inputs: vec![input.display().to_string()],
            outputs: vec!["graph.json".into()],
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )
}

fn cmd_spectrum(input: &Path, out: &Path, threads: usize, started: Instant) -> Result<()> {
    let doc = load_graph_json(input)?;
    let graph = doc.to_graph()?;
    let basis = eigendecompose(&graph.laplacian, 1e-10)?;
    ensure_dir(out)?;
    let mut csv = String::from("index,lambda\n");
    for (i, l) in basis.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    io::write_text(out.join("eigenvalues.csv"), &csv)?;
    save_basis(out.join("basis.bin"), &basis)?;
    println!(
        "spectrum: n={} lambda_2={:.6} lambda_max={:.6}",
        basis.n(),
        basis.eigenvalues.get(1).copied().unwrap_or(0.0),
        basis.lambda_max()
    );
    write_manifest(
        out,
        &RunManifest {
            command: "spectrum".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({}),
            inputs: vec![input.display().to_string()],
            outputs: vec!["eigenvalues.csv".into(), "basis.bin".into()],
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )
}

/// Coefficients CSV: `band,vertex,ch0..`, bands in scaling-first order.
fn coefficients_csv(coeffs: &WaveletCoefficients) -> String {
    let channels = coeffs.coeffs[0].cols();
    let mut out = String::from("band,vertex");
    for c in 0..channels {
        out.push_str(&format!(",ch{c}"));
    }
    out.push('\n');
    for (band, block) in coeffs.coeffs.iter().enumerate() {
        for v in 0..block.rows() {
            out.push_str(&format!("{band},{v}"));
            for c in 0..channels {
                out.push_str(&format!(",{}", block.get(v, c)));
            }
            out.push('\n');
        }
    }
    out
}

fn coefficients_from_rows(rows: &[Vec<f64>], frame: &WaveletFrame) -> Result<WaveletCoefficients> {
    let n = frame.n();
    let bands = 1 + frame.num_scales();
    if rows.len() != bands * n {
        return Err(Error::DimensionMismatch(format!(
            "coefficients CSV has {} rows, frame expects {}",
            rows.len(),
            bands * n
        )));
    }
    let channels = rows[0].len() - 2;
    if channels == 0 {
        return Err(Error::DimensionMismatch(
            "coefficients CSV needs band,vertex,ch0..".into(),
        ));
    }
    let mut blocks = vec![Mat::zeros(n, channels); bands];
    for row in rows {
        let band = row[0] as usize;
        let vertex = row[1] as usize;
        if band >= bands || vertex >= n {
            return Err(Error::DimensionMismatch(
                "band or vertex index out of range in coefficients CSV".into(),
            ));
        }
        for c in 0..channels {
            blocks[band].set(vertex, c, row[2 + c]);
        }
    }
    Ok(WaveletCoefficients {
        coeffs: blocks,
        frame_id: frame.id,
    })
}

/// Build the basis for `wavelet` per `--mode`.
fn basis_for_mode(input: &Path, mode: &str, n_hint: Option<usize>) -> Result<BasisChoice> {
    if mode == "exact" {
        return Ok(BasisChoice::FromInput);
    }
    if let Some(ckpt_path) = mode.strip_prefix("ortho:") {
        let ckpt = checkpoint::load_checkpoint(Path::new(ckpt_path))?;
        let n = n_hint.ok_or_else(|| {
            Error::InvalidArgument("ortho mode needs a graph input to size the basis".into())
        })?;
        // find a trained layer whose basis dimension matches the graph
        let mut found = None;
        for p in &ckpt.params {
            if p.name.ends_with(".ortho.q_eps") && p.rows == n {
                let prefix = p.name.trim_end_matches(".q_eps");
                let c = ckpt
                    .find(&format!("{prefix}.c"))
                    .ok_or_else(|| Error::InvalidCheckpoint("missing ortho.c".into()))?;
                let lt = ckpt
                    .find(&format!("{prefix}.lambda_theta"))
                    .ok_or_else(|| Error::InvalidCheckpoint("missing lambda_theta".into()))?;
                found = Some(OrthoParam {
                    n,
                    c: c.values[0],
                    q_eps: p.values.clone(),
                    lambda_theta: lt.values.clone(),
                });
                break;
            }
        }
        let param = found.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "checkpoint {ckpt_path} has no trained basis of dimension {n}"
            ))
        })?;
        return Ok(BasisChoice::Learned(Box::new(realize_basis(&param)?)));
    }
    if let Some(deg) = mode.strip_prefix("cheby:") {
        let degree: usize = deg
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad Chebyshev degree `{deg}`")))?;
        return Ok(BasisChoice::Chebyshev(degree));
    }
    Err(Error::InvalidArgument(format!(
        "unknown mode `{mode}` (expected exact, ortho:<checkpoint>, cheby:<K>); input was {}",
        input.display()
    )))
}

enum BasisChoice {
    FromInput,
    Learned(Box<SpectralBasis>),
    Chebyshev(usize),
}

#[allow(clippy::too_many_arguments)]
fn cmd_wavelet(
    input: &Path,
    signal_path: &Path,
    family: &str,
    j: usize,
    mode: &str,
    inverse: bool,
    out: &Path,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let family = parse_family(family)?;
    let kernels = family.kernels();

    // the input is either a graph document or a serialized basis
    let is_basis = input.extension().map(|e| e == "bin").unwrap_or(false);
    let (graph, mut basis) = if is_basis {
        (None, Some(load_basis(input)?))
    } else {
        let doc = load_graph_json(input)?;
        (Some(doc.to_graph()?), None)
    };
    let n = basis
        .as_ref()
        .map(|b| b.n())
        .or(graph.as_ref().map(|g| g.n))
        .unwrap();

    let choice = basis_for_mode(input, mode, Some(n))?;
    let scales = select_scales_for(family, 2.0, j);
    ensure_dir(out)?;
    let mut outputs = Vec::new();

    // Chebyshev mode filters directly with the Laplacian; everything else
    // goes through an explicit frame.
    if let BasisChoice::Chebyshev(degree) = choice {
        if inverse {
            return Err(Error::InvalidArgument(
                "cheby mode has no inverse path; reconstruct with exact or ortho".into(),
            ));
        }
        let graph = graph.ok_or_else(|| {
            Error::InvalidArgument("cheby mode needs a graph input, not a basis".into())
        })?;
        let f = load_signal_csv(signal_path)?;
        if f.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, graph has {n}",
                f.rows()
            )));
        }
        let mut blocks = Vec::with_capacity(1 + scales.len());
        let theta0 = crate::wavelets::fit_chebyshev_coeffs(|x| kernels.h(x), 1.0, 2.0, degree);
        blocks.push(crate::wavelets::chebyshev_filter(&graph.laplacian, 2.0, &theta0, &f)?);
        for &s in &scales {
            let th = crate::wavelets::fit_chebyshev_coeffs(|x| kernels.g(x), s, 2.0, degree);
            blocks.push(crate::wavelets::chebyshev_filter(&graph.laplacian, 2.0, &th, &f)?);
        }
        let coeffs = WaveletCoefficients {
            coeffs: blocks,
            frame_id: 0,
        };
        io::write_text(out.join("coefficients.csv"), &coefficients_csv(&coeffs))?;
        outputs.push("coefficients.csv".to_string());
        // deviation against the exact spectral path, for calibration of K
        let basis = eigendecompose(&graph.laplacian, 1e-10)?;
        let frame = build_frame(&basis, kernels, &scales)?;
        let exact = wavelet_transform(&frame, &f)?;
        let mut max_dev = 0.0f64;
        for (a, b) in coeffs.coeffs.iter().zip(&exact.coeffs) {
            max_dev = max_dev.max(a.sub(b).max_abs());
        }
        println!(
            "wavelet: cheby:{degree} transform, {} bands x {n} vertices, max_dev_vs_exact={max_dev:.6e}",
            1 + j
        );
        return write_manifest(
            out,
            &RunManifest {
                command: "wavelet".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: None,
                config: serde_json::json!({
                    "family": family.name(), "j": j, "mode": mode, "inverse": inverse,
                    "signal": signal_path.display().to_string(),
                }),
                inputs: vec![
                    input.display().to_string(),
                    signal_path.display().to_string(),
                ],
                outputs,
                duration_ms: started.elapsed().as_millis(),
                threads,
            },
        );
    }

    if basis.is_none() {
        basis = Some(match &choice {
            BasisChoice::Learned(b) => (**b).clone(),
            _ => eigendecompose(&graph.as_ref().unwrap().laplacian, 1e-10)?,
        });
    } else if let BasisChoice::Learned(b) = &choice {
        basis = Some((**b).clone());
    }
    let basis = basis.unwrap();
    let frame = build_frame(&basis, kernels, &scales)?;

    if inverse {
        let rows = load_numeric_csv(signal_path)?;
        let coeffs = coefficients_from_rows(&rows, &frame)?;
        let rec = crate::wavelets::inverse_wavelet_transform(&frame, &coeffs)?;
        io::write_text(out.join("reconstruction.csv"), &signal_csv(&rec))?;
        outputs.push("reconstruction.csv".into());
        println!("wavelet: reconstructed {} vertices x {} channels", rec.rows(), rec.cols());
    } else {
        let f = load_signal_csv(signal_path)?;
        let coeffs = wavelet_transform(&frame, &f)?;
        // round-trip diagnostic on the forward path
        let rec = crate::wavelets::inverse_wavelet_transform(&frame, &coeffs)?;
        let rel = rec.sub(&f).frobenius_norm() / f.frobenius_norm().max(1e-300);
        io::write_text(out.join("coefficients.csv"), &coefficients_csv(&coeffs))?;
        outputs.push("coefficients.csv".into());
        println!(
            "wavelet: {} bands x {n} vertices, roundtrip_rel_err={rel:.3e}",
            1 + j
        );
    }

    write_manifest(
        out,
        &RunManifest {
            command: "wavelet".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({
                "family": family.name(), "j": j, "mode": mode, "inverse": inverse,
                "signal": signal_path.display().to_string(),
            }),
            inputs: vec![
                input.display().to_string(),
                signal_path.display().to_string(),
            ],
            outputs,
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_localize(
    input: &Path,
    vertex: usize,
    modes: &str,
    j: usize,
    family: &str,
    out: &Path,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let family = parse_family(family)?;
    let doc = load_graph_json(input)?;
    let graph = doc.to_graph()?;
    if vertex >= graph.n {
        return Err(Error::VertexOutOfRange {
            index: vertex,
            n: graph.n,
        });
    }
    let basis = eigendecompose(&graph.laplacian, 1e-10)?;
    let scales = select_scales_for(family, 2.0, j);
    let frame = build_frame(&basis, family.kernels(), &scales)?;

    let mut parsed_modes = Vec::new();
    for tok in modes.split(',') {
        let tok = tok.trim();
        if tok == "fourier" {
            parsed_modes.push((tok.to_string(), ImpulseMode::Fourier));
        } else if tok == "scaling" {
            parsed_modes.push((tok.to_string(), ImpulseMode::Scaling));
        } else if let Some(idx) = tok.strip_prefix("wavelet:") {
            let sj: usize = idx
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad wavelet index `{idx}`")))?;
            parsed_modes.push((format!("wavelet_{sj}"), ImpulseMode::Wavelet(sj)));
        } else {
            return Err(Error::InvalidArgument(format!("unknown mode `{tok}`")));
        }
    }

    let mut columns = Vec::new();
    for (_, mode) in &parsed_modes {
        columns.push(impulse_response(&frame, vertex, *mode)?);
    }

    ensure_dir(out)?;
    let mut csv = String::from("vertex");
    for (name, _) in &parsed_modes {
        csv.push_str(&format!(",{name}"));
    }
    csv.push('\n');
    for v in 0..graph.n {
        csv.push_str(&format!("{v}"));
        for col in &columns {
            csv.push_str(&format!(",{}", col[v]));
        }
        csv.push('\n');
    }
    io::write_text(out.join("localize.csv"), &csv)?;

    // localization summary: small scales concentrate near the source
    let first = frame.operators[1].col(vertex);
    let last = frame.operators[frame.num_scales()].col(vertex);
    let near_first = energy_fraction_within_hops(&graph.adjacency, &first, vertex, 2);
    let near_last = energy_fraction_within_hops(&graph.adjacency, &last, vertex, 2);
    println!(
        "localize: vertex {vertex}, 2-hop energy fraction s1={near_first:.4} sJ={near_last:.4}"
    );

    write_manifest(
        out,
        &RunManifest {
            command: "localize".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({
                "vertex": vertex, "modes": modes, "j": j, "family": family.name(),
            }),
            inputs: vec![input.display().to_string()],
            outputs: vec!["localize.csv".into()],
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_framecheck(
    family: &str,
    j: usize,
    lambda_max: f64,
    grid_n: usize,
    scales_override: Option<&str>,
    out: &Path,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let family = parse_family(family)?;
    if grid_n < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 samples".into()));
    }
    let scales = match scales_override {
        None => select_scales_for(family, lambda_max, j),
        Some(spec) => {
            let parsed: std::result::Result<Vec<f64>, _> =
                spec.split(',').map(|t| t.trim().parse::<f64>()).collect();
            parsed.map_err(|_| Error::InvalidArgument(format!("bad scales `{spec}`")))?
        }
    };
    let grid = linspace(lambda_max, grid_n);
    let kernels = family.kernels();
    let (min_p, rows) = frame_check(&kernels, &scales, &grid);

    ensure_dir(out)?;
    let mut csv = String::from("lambda,h_sq");
    for i in 1..=scales.len() {
        csv.push_str(&format!(",g_sq_{i}"));
    }
    csv.push_str(",p\n");
    for row in &rows {
        csv.push_str(&format!("{},{}", row.lambda, row.h_sq));
        for g in &row.g_sq {
            csv.push_str(&format!(",{g}"));
        }
        csv.push_str(&format!(",{}\n", row.p));
    }
    io::write_text(out.join("framecheck.csv"), &csv)?;
    write_manifest(
        out,
        &RunManifest {
            command: "framecheck".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({
                "family": family.name(), "j": j, "lambda_max": lambda_max,
                "grid": grid_n, "scales": scales,
            }),
            inputs: vec![],
            outputs: vec!["framecheck.csv".into()],
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )?;

    if min_p <= 1e-12 {
        let worst = rows
            .iter()
            .min_by(|a, b| a.p.partial_cmp(&b.p).unwrap())
            .unwrap();
        return Err(Error::FrameViolation {
            lambda: worst.lambda,
            p: worst.p,
        });
    }
    println!("framecheck: min_p={min_p:.6e} over [{:.3}, {lambda_max}]", 0.0);
    Ok(())
}

/// The cmd_train JSON config: dataset, network, and optimization sections,
/// each optional and defaulted.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TrainFileConfig {
    #[serde(default)]
    pub dataset: SynthDatasetConfig,
    pub net: Option<NetConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn cmd_train(
    variant: &str,
    config: Option<&Path>,
    out_dir: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let variant = parse_variant(variant)?;
    let mut file_cfg: TrainFileConfig = match config {
        None => TrainFileConfig {
            dataset: SynthDatasetConfig::default(),
            net: None,
            train: TrainConfig::default(),
        },
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&body)?
        }
    };
    file_cfg.train.variant = variant;
    if let Some(e) = epochs {
        file_cfg.train.epochs = e;
    }
    if let Some(s) = seed {
        file_cfg.train.seed = s;
    }
    let net_cfg = file_cfg.net.clone().unwrap_or_else(|| NetConfig::desk_default(3));

    let (train, test) = synth_dataset(&file_cfg.dataset)?;
    let outcome = nn::train_toy(&train, &test, &net_cfg, &file_cfg.train)?;

    ensure_dir(out_dir)?;
    io::write_text(out_dir.join("metrics.csv"), &outcome.metrics_csv())?;
    let echo = serde_json::json!({
        "variant": variant.name(),
        "dataset": file_cfg.dataset,
        "net": net_cfg,
        "train": file_cfg.train,
    });
    checkpoint::save_checkpoint(out_dir.join("checkpoint.bin"), &echo, &outcome.network.store)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "train: variant={} epochs={} final task_loss={:.4} train_acc={:.3} test_acc={:.3}{}",
        variant.name(),
        outcome.history.len(),
        last.task_loss,
        last.train_acc,
        last.test_acc,
        if outcome.stopped_early { " (early stop)" } else { "" },
    );
    for (i, r) in last.reg_per_layer.iter().enumerate() {
        println!("  reg wf{}: {r:.6}", i + 1);
    }

    write_manifest(
        out_dir,
        &RunManifest {
            command: "train".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(file_cfg.train.seed),
            config: echo,
            inputs: config.iter().map(|p| p.display().to_string()).collect(),
            outputs: vec!["metrics.csv".into(), "checkpoint.bin".into()],
            duration_ms: started.elapsed().as_millis(),
            threads,
        },
    )
}

fn cmd_ortho_selftest(
    n_max: usize,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    threads: usize,
    started: Instant,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = [2usize, 4, 16, 64, 256]
        .into_iter()
        .filter(|&d| d <= n_max.max(2))
        .collect();
    let mut report = String::new();
    let mut worst_overall = 0.0f64;
    for &n in &dims {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut q: Vec<f64>;
            loop {
                q = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = crate::linalg::norm2(&q);
                if norm > 1e-3 {
                    for v in &mut q {
                        *v /= norm;
                    }
                    let tail: f64 = q[1..].iter().map(|v| v * v).sum();
                    if tail.sqrt() > 1e-6 {
                        break;
                    }
                }
            }
            let u = orthogonal_from_vector(&q)?;
            worst = worst.max(u.max_gram_identity_deviation());
        }
        let line = format!(
            "n={n}: {trials} trials, max |I - U U^T| = {worst:.3e} (bound {:.3e})\n",
            1e-12 * n as f64
        );
        print!("{line}");
        report.push_str(&line);
        worst_overall = worst_overall.max(worst);
        if worst > 1e-12 * n as f64 {
            return Err(Error::InvalidArgument(format!(
                "orthogonality deviation {worst:.3e} exceeds bound at n={n}"
            )));
        }
    }

    // degenerate input must be rejected loudly
    let mut e1 = vec![0.0; dims[dims.len() - 1]];
    e1[0] = 1.0;
    match orthogonal_from_vector(&e1) {
        Err(Error::DegenerateDirection) => {
            let line = "degenerate q = e1: correctly rejected\n".to_string();
            print!("{line}");
            report.push_str(&line);
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "degenerate q should be rejected, got {other:?}"
            )))
        }
    }

    // synthesized Laplacians keep the zero-row-sum property
    let mut max_row_sum = 0.0f64;
    for _ in 0..20 {
        let n = 2 + (rng.random::<u32>() as usize) % 31;
        let param = OrthoParam {
            n,
            c: rng.random_range(0.2..1.0),
            q_eps: vec![0.0; n],
            lambda_theta: (0..n - 1).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let basis = realize_basis(&param)?;
        let lap = synth_laplacian(&basis)?;
        for i in 0..n {
            max_row_sum = max_row_sum.max(lap.row(i).iter().sum::<f64>().abs());
        }
    }
    let line = format!("synthesized Laplacians: max |row sum| = {max_row_sum:.3e}\n");
    print!("{line}");
    report.push_str(&line);
    if max_row_sum > 1e-10 {
        return Err(Error::InvalidArgument(
            "synthesized Laplacian row sums exceed 1e-10".into(),
        ));
    }
    println!("ortho-selftest: PASS (max deviation {worst_overall:.3e})");
    report.push_str(&format!("PASS (max deviation {worst_overall:.3e})\n"));

    if let Some(dir) = out {
        ensure_dir(dir)?;
        io::write_text(dir.join("report.txt"), &report)?;
        write_manifest(
            dir,
            &RunManifest {
                command: "ortho-selftest".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: Some(seed),
                config: serde_json::json!({"n": n_max, "trials": trials}),
                inputs: vec![],
                outputs: vec!["report.txt".into()],
                duration_ms: started.elapsed().as_millis(),
                threads,
            },
        )?;
    }
    Ok(())
}
