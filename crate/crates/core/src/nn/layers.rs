//! Network blocks: shared MLPs, transformer encoder layers, set abstraction,
//! the wavelet-token encoder, and the generic spectral filter layer.
//!
//! The wavelet-token encoder is the spectral workhorse: per point-cloud
//! sample it turns centroid features into 1+J band embeddings (one per
//! scaling/wavelet operator), treats the per-vertex band vectors as tokens,
//! mixes them with self-attention across bands, then concatenates the bands
//! channelwise and projects back to the layer width. The basis behind the
//! band embeddings is pluggable: an exact eigendecomposition of the local
//! graph Laplacian (gradient-free), a trained closed-form orthogonal matrix,
//! a penalized free matrix, or basis-free Chebyshev filtering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, eigendecompose, SigmaMode};
use crate::wavelets::{select_scales_for, KernelFamily, WaveletFrame};

use super::params::{Bindings, ParamId, ParamStore};
use super::sampling::{center_of_mass_index, farthest_point_sampling, k_nearest_to};
use super::tensor::{KernelPart, Tape, TensorId};

/// Configuration of one set-abstraction layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaLayerConfig {
    pub centroids: usize,
    pub k: usize,
    pub out_channels: usize,
}

/// Configuration of one wavelet-token encoder layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WfLayerConfig {
    pub encoders: usize,
    pub dim: usize,
    pub heads: usize,
    pub j_scales: usize,
    pub kernel: KernelFamily,
    pub basis_mode: BasisMode,
    /// Neighborhood size for the centroid-set graph (from the preceding SA).
    pub k: usize,
}

/// How the spectral basis of a wavelet-token layer is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// Eigendecompose the local Laplacian; the basis is a constant of the
    /// forward pass (no gradient flows into it).
    ExactEig,
    /// Closed-form orthogonal matrix from trained vectors (always orthogonal).
    LearnedOrtho,
    /// Free trainable matrix, pushed toward orthogonality by a penalty.
    FreeOrtho,
    /// No basis at all: Chebyshev polynomial filtering of the given degree.
    Chebyshev(usize),
}

/// A stack of `Linear -> ReLU` layers with an optional linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    weights: Vec<(ParamId, ParamId)>,
    relu_last: bool,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        relu_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dims.len() >= 2);
        let mut weights = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let wid = store.add_xavier(format!("{name}.w{i}"), w[0], w[1], rng);
            let bid = store.add_zeros(format!("{name}.b{i}"), 1, w[1]);
            weights.push((wid, bid));
        }
        Mlp { weights, relu_last }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        mut x: TensorId,
    ) -> TensorId {
        let last = self.weights.len() - 1;
        for (i, &(w, b)) in self.weights.iter().enumerate() {
            let wt = bind.bind(tape, store, w);
            let bt = bind.bind(tape, store, b);
            let lin = tape.matmul(x, wt);
            x = tape.col_add(lin, bt);
            if i < last || self.relu_last {
                x = tape.relu(x);
            }
        }
        x
    }
}

/// One post-norm transformer encoder layer (multi-head self-attention over
/// token groups, feed-forward, residuals, layer norms).
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    wf1: ParamId,
    bf1: ParamId,
    wf2: ParamId,
    bf2: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    heads: usize,
    dim: usize,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dim % heads == 0, "dim must be divisible by heads");
        let ff = 2 * dim;
        EncoderLayer {
            wq: store.add_xavier(format!("{name}.wq"), dim, dim, rng),
            wk: store.add_xavier(format!("{name}.wk"), dim, dim, rng),
            wv: store.add_xavier(format!("{name}.wv"), dim, dim, rng),
            wo: store.add_xavier(format!("{name}.wo"), dim, dim, rng),
            bo: store.add_zeros(format!("{name}.bo"), 1, dim),
            ln1_gamma: store.add(format!("{name}.ln1.g"), 1, dim, vec![1.0; dim]),
            ln1_beta: store.add_zeros(format!("{name}.ln1.b"), 1, dim),
            wf1: store.add_xavier(format!("{name}.ff.w0"), dim, ff, rng),
            bf1: store.add_zeros(format!("{name}.ff.b0"), 1, ff),
            wf2: store.add_xavier(format!("{name}.ff.w1"), ff, dim, rng),
            bf2: store.add_zeros(format!("{name}.ff.b1"), 1, dim),
            ln2_gamma: store.add(format!("{name}.ln2.g"), 1, dim, vec![1.0; dim]),
            ln2_beta: store.add_zeros(format!("{name}.ln2.b"), 1, dim),
            heads,
            dim,
        }
    }

    /// `x` is `(groups * tokens) x dim`; attention is local to each group.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        x: TensorId,
        tokens: usize,
    ) -> TensorId {
        let (rows, dim) = tape.shape(x);
        assert_eq!(dim, self.dim);
        assert!(rows % tokens == 0);
        let dh = dim / self.heads;

        let wq = bind.bind(tape, store, self.wq);
        let wk = bind.bind(tape, store, self.wk);
        let wv = bind.bind(tape, store, self.wv);
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let qh = tape.split_heads(q, tokens, self.heads);
        let kh = tape.split_heads(k, tokens, self.heads);
        let vh = tape.split_heads(v, tokens, self.heads);
        let scores = tape.group_matmul_nt(qh, kh, tokens);
        let scaled = tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let mixed = tape.group_matmul_nn(attn, vh, tokens);
        let merged = tape.merge_heads(mixed, tokens, self.heads);
        let wo = bind.bind(tape, store, self.wo);
        let bo = bind.bind(tape, store, self.bo);
        let proj = tape.matmul(merged, wo);
        let attn_out = tape.col_add(proj, bo);

        let res1 = tape.add(x, attn_out);
        let n1 = tape.layer_norm_rows(res1, 1e-5);
        let g1 = bind.bind(tape, store, self.ln1_gamma);
        let b1 = bind.bind(tape, store, self.ln1_beta);
        let scaled1 = tape.col_scale(n1, g1);
        let x1 = tape.col_add(scaled1, b1);

        let wf1 = bind.bind(tape, store, self.wf1);
        let bf1 = bind.bind(tape, store, self.bf1);
        let wf2 = bind.bind(tape, store, self.wf2);
        let bf2 = bind.bind(tape, store, self.bf2);
        let h1 = tape.matmul(x1, wf1);
        let h1b = tape.col_add(h1, bf1);
        let h1r = tape.relu(h1b);
        let h2 = tape.matmul(h1r, wf2);
        let ff_out = tape.col_add(h2, bf2);

        let res2 = tape.add(x1, ff_out);
        let n2 = tape.layer_norm_rows(res2, 1e-5);
        let g2 = bind.bind(tape, store, self.ln2_gamma);
        let b2 = bind.bind(tape, store, self.ln2_beta);
        let scaled2 = tape.col_scale(n2, g2);
        tape.col_add(scaled2, b2)
    }
}

/// Set abstraction: farthest point sampling, k-NN grouping with relative
/// coordinates, a shared per-point MLP, and max-pooling per neighborhood.
#[derive(Debug, Clone)]
pub struct SaLayer {
    pub cfg: SaLayerConfig,
    mlp: Mlp,
}

impl SaLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        cfg: SaLayerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // input per neighbor: relative coordinates plus the neighbor feature
        let in_dim = 3 + in_channels;
        let mlp = Mlp::new(
            store,
            &format!("{name}.mlp"),
            &[in_dim, cfg.out_channels, cfg.out_channels],
            true,
            rng,
        );
        SaLayer { cfg, mlp }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        positions: &[[f64; 3]],
        feats: TensorId,
    ) -> Result<(Vec<[f64; 3]>, TensorId)> {
        let n = positions.len();
        let (fr, _) = tape.shape(feats);
        if fr != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} points but {fr} feature rows"
            )));
        }
        if self.cfg.k == 0 || self.cfg.k > n {
            return Err(Error::InvalidK { k: self.cfg.k, n });
        }
        let start = center_of_mass_index(positions);
        let centroid_idx = farthest_point_sampling(positions, self.cfg.centroids, start)?;

        let mut gather_idx = Vec::with_capacity(self.cfg.centroids * self.cfg.k);
        let mut rel = Vec::with_capacity(self.cfg.centroids * self.cfg.k * 3);
        let mut centroids = Vec::with_capacity(self.cfg.centroids);
        for &ci in &centroid_idx {
            let c = positions[ci];
            centroids.push(c);
            for &j in &k_nearest_to(positions, &c, self.cfg.k) {
                gather_idx.push(j);
                rel.push(positions[j][0] - c[0]);
                rel.push(positions[j][1] - c[1]);
                rel.push(positions[j][2] - c[2]);
            }
        }

        let gathered = tape.gather_rows(feats, &gather_idx);
        let rel_leaf = tape.leaf(gather_idx.len(), 3, rel);
        let local = tape.concat_cols(&[rel_leaf, gathered]);
        let lifted = self.mlp.forward(tape, store, bind, local);
        let pooled = tape.group_max_pool(lifted, self.cfg.k);
        Ok((centroids, pooled))
    }
}

/// Trainable pieces of one wavelet-token encoder layer.
#[derive(Debug, Clone)]
pub struct WfLayer {
    pub cfg: WfLayerConfig,
    /// Fixed vertex count (the centroid count of the preceding SA layer);
    /// required for the trained basis modes whose parameters have size n.
    pub n_vertices: usize,
    scales: Vec<f64>,
    encoders: Vec<EncoderLayer>,
    proj_w: ParamId,
    proj_b: ParamId,
    // LearnedOrtho / FreeOrtho
    ortho_c: Option<ParamId>,
    ortho_qeps: Option<ParamId>,
    lambda_theta: Option<ParamId>,
    free_u: Option<ParamId>,
    // Chebyshev: one coefficient vector per band (scaling + J wavelets)
    cheb_theta: Vec<ParamId>,
}

impl WfLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_vertices: usize,
        cfg: WfLayerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_vertices < 2 {
            return Err(Error::InvalidArgument(format!(
                "wavelet-token layer needs >= 2 vertices, got {n_vertices}"
            )));
        }
        if cfg.dim % cfg.heads != 0 {
            return Err(Error::InvalidArgument(
                "encoder dim must be divisible by heads".into(),
            ));
        }
        if cfg.j_scales == 0 {
            return Err(Error::InvalidArgument("need at least one scale".into()));
        }
        // spectral range of the normalized Laplacian is [0, 2]; the learned
        // eigenvalues live there too, so scales are fixed per J
        let scales = select_scales_for(cfg.kernel, 2.0, cfg.j_scales);
        let tokens = 1 + cfg.j_scales;
        let mut encoders = Vec::with_capacity(cfg.encoders);
        for e in 0..cfg.encoders {
            encoders.push(EncoderLayer::new(
                store,
                &format!("{name}.enc{e}"),
                cfg.dim,
                cfg.heads,
                rng,
            ));
        }
        let proj_w = store.add_xavier(format!("{name}.proj.w"), tokens * cfg.dim, cfg.dim, rng);
        let proj_b = store.add_zeros(format!("{name}.proj.b"), 1, cfg.dim);

        let mut layer = WfLayer {
            cfg: cfg.clone(),
            n_vertices,
            scales,
            encoders,
            proj_w,
            proj_b,
            ortho_c: None,
            ortho_qeps: None,
            lambda_theta: None,
            free_u: None,
            cheb_theta: Vec::new(),
        };

        match cfg.basis_mode {
            BasisMode::ExactEig => {}
            BasisMode::LearnedOrtho => {
                let c0 = 1.0 / (n_vertices as f64).sqrt();
                layer.ortho_c = Some(store.add(format!("{name}.ortho.c"), 1, 1, vec![c0]));
                // small random start so the L1 regularizer has something to
                // shrink; zero would make its trajectory trivially flat
                let qeps: Vec<f64> = (0..n_vertices)
                    .map(|_| rng.random_range(-0.03..0.03))
                    .collect();
                layer.ortho_qeps = Some(store.add(format!("{name}.ortho.q_eps"), n_vertices, 1, qeps));
                let ltheta: Vec<f64> = (0..n_vertices - 1)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                layer.lambda_theta =
                    Some(store.add(format!("{name}.ortho.lambda_theta"), n_vertices - 1, 1, ltheta));
            }
            BasisMode::FreeOrtho => {
                let c0 = 1.0 / (n_vertices as f64).sqrt();
                layer.ortho_c = Some(store.add(format!("{name}.ortho.c"), 1, 1, vec![c0]));
                // start near the constant-vector orthogonal completion plus
                // noise, so the penalty is visibly positive at epoch one
                let q = vec![c0; n_vertices];
                let u0 = crate::ortho::orthogonal_from_vector(&q)?;
                let mut free = Vec::with_capacity(n_vertices * (n_vertices - 1));
                for i in 0..n_vertices {
                    for j in 1..n_vertices {
                        free.push(u0.get(i, j) + rng.random_range(-0.05..0.05));
                    }
                }
                layer.free_u =
                    Some(store.add(format!("{name}.ortho.u_free"), n_vertices, n_vertices - 1, free));
                let ltheta: Vec<f64> = (0..n_vertices - 1)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                layer.lambda_theta =
                    Some(store.add(format!("{name}.ortho.lambda_theta"), n_vertices - 1, 1, ltheta));
            }
            BasisMode::Chebyshev(degree) => {
                let kp = cfg.kernel.kernels();
                let c0 = crate::wavelets::fit_chebyshev_coeffs(|x| kp.h(x), 1.0, 2.0, degree);
                layer
                    .cheb_theta
                    .push(store.add(format!("{name}.cheb.theta0"), degree + 1, 1, c0));
                for (j, &s) in layer.scales.iter().enumerate() {
                    let cj = crate::wavelets::fit_chebyshev_coeffs(|x| kp.g(x), s, 2.0, degree);
                    layer.cheb_theta.push(store.add(
                        format!("{name}.cheb.theta{}", j + 1),
                        degree + 1,
                        1,
                        cj,
                    ));
                }
            }
        }
        Ok(layer)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// The L1-regularized perturbation parameter (Learned mode).
    pub fn qeps_param(&self) -> Option<ParamId> {
        match self.cfg.basis_mode {
            BasisMode::LearnedOrtho => self.ortho_qeps,
            _ => None,
        }
    }

    /// The shared first-column scalar and free-matrix parameters (Free mode).
    pub fn free_params(&self) -> Option<(ParamId, ParamId)> {
        match self.cfg.basis_mode {
            BasisMode::FreeOrtho => Some((self.ortho_c?, self.free_u?)),
            _ => None,
        }
    }

    /// Current `||I - U U^T||_F^2` of the free basis, from stored values.
    pub fn free_ortho_penalty(&self, store: &ParamStore) -> Option<f64> {
        let (c_id, u_id) = self.free_params()?;
        let n = self.n_vertices;
        let c = store.values(c_id)[0];
        let free = store.values(u_id);
        let mut u = crate::linalg::Mat::zeros(n, n);
        for i in 0..n {
            u.set(i, 0, c);
            for j in 0..n - 1 {
                u.set(i, j + 1, free[i * (n - 1) + j]);
            }
        }
        Some(crate::ortho::ortho_penalty(&u))
    }

    /// Build the differentiable orthogonal matrix from the bound parameters
    /// (Learned mode). Returns the U node.
    fn learned_basis_u(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
    ) -> (TensorId, TensorId) {
        let n = self.n_vertices;
        let c_node = bind.bind(tape, store, self.ortho_c.expect("learned mode"));
        let qeps_node = bind.bind(tape, store, self.ortho_qeps.expect("learned mode"));
        let ones = tape.ones(n, 1);
        let q_ini = tape.scale_by(ones, c_node);
        let q_raw = tape.add(q_ini, qeps_node);
        let sq = tape.mul(q_raw, q_raw);
        let norm_sq = tape.sum_all(sq);
        let norm = tape.sqrt(norm_sq);
        let inv_norm = tape.recip(norm);
        let q = tape.scale_by(q_raw, inv_norm);

        let q1 = tape.gather_rows(q, &[0]);
        let tail_idx: Vec<usize> = (1..n).collect();
        let qr = tape.gather_rows(q, &tail_idx);
        let qr_sq = tape.mul(qr, qr);
        let tail = tape.sum_all(qr_sq);
        let q1m1 = tape.add_scalar(q1, -1.0);
        let inv_tail = tape.recip(tail);
        let alpha = tape.mul(q1m1, inv_tail);

        let outer = tape.matmul_nt(qr, qr);
        let f_block = tape.scale_by(outer, alpha);
        let eye = tape.eye(n - 1);
        let inner = tape.add(f_block, eye);

        let neg_qr = tape.neg(qr);
        let neg_qr_t = tape.transpose(neg_qr);
        let top = tape.concat_cols(&[q1, neg_qr_t]);
        let bottom = tape.concat_cols(&[qr, inner]);
        let u = tape.concat_rows(&[top, bottom]);
        (u, qeps_node)
    }

    /// Sorted differentiable eigenvalue vector `(0, sort(tanh(theta)+1))`.
    fn learned_lambda(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
    ) -> TensorId {
        let lt = bind.bind(tape, store, self.lambda_theta.expect("trained eigenvalues"));
        let th = tape.tanh(lt);
        let lam_tail = tape.add_scalar(th, 1.0);
        let vals = tape.values(lam_tail).to_vec();
        let mut perm: Vec<usize> = (0..vals.len()).collect();
        perm.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
        let sorted = tape.gather_rows(lam_tail, &perm);
        let zero = tape.zeros(1, 1);
        tape.concat_rows(&[zero, sorted])
    }

    /// Compute the 1+J band embeddings of `feats`, each `n x dim`, plus the
    /// layer's regularizer node when the basis mode has one.
    fn band_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        positions: &[[f64; 3]],
        feats: TensorId,
    ) -> Result<(Vec<TensorId>, Option<TensorId>)> {
        let n = positions.len();
        let kp = self.cfg.kernel.kernels();
        match self.cfg.basis_mode {
            BasisMode::ExactEig => {
                // basis is constant: no gradient flows through it
                let k_eff = self.cfg.k.min(n - 1);
                let pc = PointCloud::from_positions(positions.to_vec());
                let graph = build_knn_graph(&pc, k_eff, SigmaMode::MeanKnnDist)?;
                let basis = eigendecompose(&graph.laplacian, 1e-10)?;
                let u = tape.leaf(n, n, basis.eigenvectors.as_slice().to_vec());
                let ut_f = tape.matmul_tn(u, feats);
                let mut bands = Vec::with_capacity(1 + self.scales.len());
                let h_diag: Vec<f64> = basis.eigenvalues.iter().map(|&l| kp.h(l)).collect();
                let h_leaf = tape.leaf(n, 1, h_diag);
                let scaled = tape.row_scale(ut_f, h_leaf);
                bands.push(tape.matmul(u, scaled));
                for &s in &self.scales {
                    let g_diag: Vec<f64> = basis.eigenvalues.iter().map(|&l| kp.g(s * l)).collect();
                    let g_leaf = tape.leaf(n, 1, g_diag);
                    let scaled = tape.row_scale(ut_f, g_leaf);
                    bands.push(tape.matmul(u, scaled));
                }
                Ok((bands, None))
            }
            BasisMode::LearnedOrtho => {
                if n != self.n_vertices {
                    return Err(Error::DimensionMismatch(format!(
                        "learned basis has {} vertices, sample has {n}",
                        self.n_vertices
                    )));
                }
                let (u, qeps_node) = self.learned_basis_u(tape, store, bind);
                let lam = self.learned_lambda(tape, store, bind);
                let bands = self.spectral_apply(tape, u, lam, feats, kp);
                let reg = tape.l1_norm(qeps_node);
                Ok((bands, Some(reg)))
            }
            BasisMode::FreeOrtho => {
                if n != self.n_vertices {
                    return Err(Error::DimensionMismatch(format!(
                        "free basis has {} vertices, sample has {n}",
                        self.n_vertices
                    )));
                }
                let c_node = bind.bind(tape, store, self.ortho_c.expect("free mode"));
                let ufree = bind.bind(tape, store, self.free_u.expect("free mode"));
                let ones = tape.ones(n, 1);
                let col1 = tape.scale_by(ones, c_node);
                let u = tape.concat_cols(&[col1, ufree]);
                let lam = self.learned_lambda(tape, store, bind);
                let bands = self.spectral_apply(tape, u, lam, feats, kp);
                // || I - U U^T ||_F^2
                let gram = tape.matmul_nt(u, u);
                let eye = tape.eye(n);
                let diff = tape.sub(eye, gram);
                let sq = tape.mul(diff, diff);
                let reg = tape.sum_all(sq);
                Ok((bands, Some(reg)))
            }
            BasisMode::Chebyshev(degree) => {
                let k_eff = self.cfg.k.min(n - 1);
                let pc = PointCloud::from_positions(positions.to_vec());
                let graph = build_knn_graph(&pc, k_eff, SigmaMode::MeanKnnDist)?;
                // Ltilde = 2L/lambda_max - I with lambda_max pinned at 2
                let mut lt = graph.laplacian.clone();
                for i in 0..n {
                    lt.set(i, i, lt.get(i, i) - 1.0);
                }
                let lt_leaf = tape.leaf(n, n, lt.as_slice().to_vec());
                // shared recurrence terms T_k(Ltilde) feats
                let mut terms = Vec::with_capacity(degree + 1);
                terms.push(feats);
                if degree >= 1 {
                    terms.push(tape.matmul(lt_leaf, feats));
                }
                for _ in 2..=degree {
                    let prev = terms[terms.len() - 1];
                    let prev2 = terms[terms.len() - 2];
                    let lx = tape.matmul(lt_leaf, prev);
                    let two_lx = tape.mul_scalar(lx, 2.0);
                    terms.push(tape.sub(two_lx, prev2));
                }
                let mut bands = Vec::with_capacity(self.cheb_theta.len());
                for &theta in &self.cheb_theta {
                    let th = bind.bind(tape, store, theta);
                    let mut acc: Option<TensorId> = None;
                    for (kdeg, &t) in terms.iter().enumerate() {
                        let coeff = tape.gather_rows(th, &[kdeg]);
                        let contrib = tape.scale_by(t, coeff);
                        acc = Some(match acc {
                            None => contrib,
                            Some(a) => tape.add(a, contrib),
                        });
                    }
                    bands.push(acc.expect("degree >= 0"));
                }
                Ok((bands, None))
            }
        }
    }

    /// `U diag(kernel(lambda)) U^T feats` for the scaling kernel and each scale.
    fn spectral_apply(
        &self,
        tape: &mut Tape,
        u: TensorId,
        lam: TensorId,
        feats: TensorId,
        kp: crate::wavelets::KernelPair,
    ) -> Vec<TensorId> {
        let ut_f = tape.matmul_tn(u, feats);
        let mut bands = Vec::with_capacity(1 + self.scales.len());
        let h_diag = tape.kernel_map(lam, kp, KernelPart::Scaling, 1.0);
        let scaled = tape.row_scale(ut_f, h_diag);
        bands.push(tape.matmul(u, scaled));
        for &s in &self.scales {
            let g_diag = tape.kernel_map(lam, kp, KernelPart::Wavelet, s);
            let scaled = tape.row_scale(ut_f, g_diag);
            bands.push(tape.matmul(u, scaled));
        }
        bands
    }

    /// Interleave band embeddings into per-vertex token groups:
    /// row `v * T + j` of the result is band `j` at vertex `v`.
    pub fn tokens_from_bands(
        &self,
        tape: &mut Tape,
        bands: &[TensorId],
        n: usize,
    ) -> (TensorId, usize) {
        let tokens = bands.len();
        let stacked = tape.concat_rows(bands);
        let mut perm = Vec::with_capacity(n * tokens);
        for v in 0..n {
            for j in 0..tokens {
                perm.push(j * n + v);
            }
        }
        (tape.gather_rows(stacked, &perm), tokens)
    }

    /// Full spectral-token stage: band embeddings then interleaving.
    /// Returns `(tokens tensor, token count, optional regularizer node)`.
    pub fn spectral_tokens(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        positions: &[[f64; 3]],
        feats: TensorId,
    ) -> Result<(TensorId, usize, Option<TensorId>)> {
        let (bands, reg) = self.band_embeddings(tape, store, bind, positions, feats)?;
        let (x, tokens) = self.tokens_from_bands(tape, &bands, positions.len());
        Ok((x, tokens, reg))
    }

    /// Encoder stage and band-concatenation projection, after the spectral
    /// tokens have been built.
    pub fn encode_and_project(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        mut x: TensorId,
        tokens: usize,
        n: usize,
    ) -> TensorId {
        for enc in &self.encoders {
            x = enc.forward(tape, store, bind, x, tokens);
        }
        let concat = tape.reshape(x, n, tokens * self.cfg.dim);
        let w = bind.bind(tape, store, self.proj_w);
        let b = bind.bind(tape, store, self.proj_b);
        let proj = tape.matmul(concat, w);
        tape.col_add(proj, b)
    }

    /// The whole layer: spectral tokens, encoder stack, concatenation and
    /// projection back to `dim` channels per vertex.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bind: &mut Bindings,
        positions: &[[f64; 3]],
        feats: TensorId,
    ) -> Result<(TensorId, Option<TensorId>)> {
        let (x, tokens, reg) = self.spectral_tokens(tape, store, bind, positions, feats)?;
        let out = self.encode_and_project(tape, store, bind, x, tokens, positions.len());
        Ok((out, reg))
    }
}

/// Nonlinearity selector for the generic spectral filter layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

fn activate(tape: &mut Tape, x: TensorId, act: Activation) -> TensorId {
    match act {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Spectral graph convolution layer, Fourier flavor: transform, scale by a
/// trainable diagonal, inverse-transform, activate.
pub fn spectral_filter_fourier(
    tape: &mut Tape,
    basis: &crate::graph::SpectralBasis,
    theta: TensorId,
    f: TensorId,
    act: Activation,
) -> Result<TensorId> {
    let n = basis.n();
    let (fr, _) = tape.shape(f);
    if fr != n || tape.shape(theta) != (n, 1) {
        return Err(Error::DimensionMismatch(
            "filter/signal size does not match basis".into(),
        ));
    }
    let u = tape.leaf(n, n, basis.eigenvectors.as_slice().to_vec());
    let fhat = tape.matmul_tn(u, f);
    let scaled = tape.row_scale(fhat, theta);
    let back = tape.matmul(u, scaled);
    Ok(activate(tape, back, act))
}

/// Spectral graph convolution layer, wavelet flavor: stacked transform,
/// per-band diagonal filters, least-squares inverse, activate.
pub fn spectral_filter_wavelet(
    tape: &mut Tape,
    frame: &WaveletFrame,
    thetas: &[TensorId],
    f: TensorId,
    act: Activation,
) -> Result<TensorId> {
    let n = frame.n();
    if thetas.len() != frame.operators.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} filters for {} bands",
            thetas.len(),
            frame.operators.len()
        )));
    }
    let (fr, fc) = tape.shape(f);
    if fr != n {
        return Err(Error::DimensionMismatch(
            "signal rows do not match frame".into(),
        ));
    }
    let inv_p: Vec<f64> = frame.frame_values.iter().map(|p| 1.0 / p).collect();
    let u = &frame.basis.eigenvectors;
    let mut ud = u.clone();
    for i in 0..n {
        for (jj, &p) in inv_p.iter().enumerate() {
            ud.set(i, jj, ud.get(i, jj) * p);
        }
    }
    let gram_inv = ud.matmul_nt(u);

    let mut acc: Option<TensorId> = None;
    for (psi, &theta) in frame.operators.iter().zip(thetas) {
        if tape.shape(theta) != (n, 1) {
            return Err(Error::DimensionMismatch(
                "per-band filter must be n x 1".into(),
            ));
        }
        let psi_leaf = tape.leaf(n, n, psi.as_slice().to_vec());
        let coeff = tape.matmul(psi_leaf, f);
        let filtered = tape.row_scale(coeff, theta);
        let back = tape.matmul(psi_leaf, filtered);
        acc = Some(match acc {
            None => back,
            Some(a) => tape.add(a, back),
        });
    }
    let adjoint = acc.expect("at least one band");
    let gi = tape.leaf(n, n, gram_inv.as_slice().to_vec());
    let rec = tape.matmul(gi, adjoint);
    let _ = fc;
    Ok(activate(tape, rec, act))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Bindings, ParamStore};
    use crate::nn::tensor::Tape;
    use crate::wavelets::{
        build_frame, graph_fourier, inverse_graph_fourier, select_scales, spectral_convolution,
    };
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn sa_shape_contract_and_self_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = SaLayerConfig { centroids: 5, k: 1, out_channels: 7 };
        let sa = SaLayer::new(&mut store, "sa", 2, cfg, &mut rng);
        let positions = random_cloud(5, 2);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let feats = tape.leaf(5, 2, (0..10).map(|i| i as f64 * 0.1).collect());
        let (centroids, out) = sa
            .forward(&mut tape, &store, &mut bind, &positions, feats)
            .unwrap();
        assert_eq!(centroids.len(), 5);
        assert_eq!(tape.shape(out), (5, 7));
        // with k = 1 every centroid's sole neighbor is itself, so the layer
        // reduces to the per-point MLP of [0, 0, 0, own feature]
        for (row, c) in centroids.iter().enumerate() {
            let src = positions.iter().position(|p| p == c).unwrap();
            let mut probe_tape = Tape::new();
            let mut probe_bind = Bindings::new();
            let input = probe_tape.leaf(
                1,
                5,
                vec![0.0, 0.0, 0.0, src as f64 * 0.2, src as f64 * 0.2 + 0.1],
            );
            let direct = sa
                .mlp
                .forward(&mut probe_tape, &store, &mut probe_bind, input);
            for ch in 0..7 {
                assert_eq!(tape.value_at(out, row, ch), probe_tape.value_at(direct, 0, ch));
            }
        }
    }

    #[test]
    fn sa_errors_when_k_exceeds_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = SaLayerConfig { centroids: 2, k: 9, out_channels: 4 };
        let sa = SaLayer::new(&mut store, "sa", 3, cfg, &mut rng);
        let positions = random_cloud(4, 3);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let feats = tape.zeros(4, 3);
        assert!(matches!(
            sa.forward(&mut tape, &store, &mut bind, &positions, feats),
            Err(Error::InvalidK { k: 9, n: 4 })
        ));
    }

    #[test]
    fn sa_permutation_invariance_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cfg = SaLayerConfig { centroids: 6, k: 3, out_channels: 8 };
        let sa = SaLayer::new(&mut store, "sa", 3, cfg, &mut rng);
        let positions = random_cloud(20, 6);

        let run = |perm: &[usize]| -> (Vec<[f64; 3]>, Vec<f64>) {
            let permuted: Vec<[f64; 3]> = perm.iter().map(|&i| positions[i]).collect();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let mut feat_data = Vec::new();
            for p in &permuted {
                feat_data.extend_from_slice(p);
            }
            let feats = tape.leaf(20, 3, feat_data);
            let (c, out) = sa
                .forward(&mut tape, &store, &mut bind, &permuted, feats)
                .unwrap();
            (c, tape.values(out).to_vec())
        };

        let identity: Vec<usize> = (0..20).collect();
        let mut shuffled = identity.clone();
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        for i in (1..20).rev() {
            let j = rng2.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let (c1, o1) = run(&identity);
        let (c2, o2) = run(&shuffled);
        assert_eq!(c1, c2, "centroid positions must be permutation-invariant");
        assert_eq!(o1, o2, "pooled features must be permutation-invariant");
    }

    #[test]
    fn wf_token_count_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = WfLayerConfig {
            encoders: 1,
            dim: 8,
            heads: 2,
            j_scales: 3,
            kernel: KernelFamily::MexicanHat,
            basis_mode: BasisMode::ExactEig,
            k: 3,
        };
        let wf = WfLayer::new(&mut store, "wf", 10, cfg, &mut rng).unwrap();
        let positions = random_cloud(10, 12);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let feats = tape.leaf(10, 8, (0..80).map(|i| (i as f64).sin()).collect());
        let (x, tokens, reg) = wf
            .spectral_tokens(&mut tape, &store, &mut bind, &positions, feats)
            .unwrap();
        assert_eq!(tokens, 4, "1 + J tokens");
        assert_eq!(tape.shape(x), (40, 8));
        assert!(reg.is_none());
        let (out, _) = wf
            .forward(&mut tape, &store, &mut bind, &positions, feats)
            .unwrap();
        assert_eq!(tape.shape(out), (10, 8));
    }

    #[test]
    fn wf_zero_input_zero_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let cfg = WfLayerConfig {
            encoders: 1,
            dim: 4,
            heads: 2,
            j_scales: 2,
            kernel: KernelFamily::MexicanHat,
            basis_mode: BasisMode::ExactEig,
            k: 3,
        };
        let wf = WfLayer::new(&mut store, "wf", 8, cfg, &mut rng).unwrap();
        let positions = random_cloud(8, 14);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let feats = tape.zeros(8, 4);
        let (x, _, _) = wf
            .spectral_tokens(&mut tape, &store, &mut bind, &positions, feats)
            .unwrap();
        // linearity: zero features give exactly zero spectral tokens
        assert!(tape.values(x).iter().all(|&v| v == 0.0));
        let (out, _) = wf
            .forward(&mut tape, &store, &mut bind, &positions, feats)
            .unwrap();
        assert_eq!(tape.shape(out), (8, 4));
    }

    #[test]
    fn exact_and_learned_modes_share_output_shape() {
        let positions = random_cloud(16, 15);
        let mut outs = Vec::new();
        for mode in [BasisMode::ExactEig, BasisMode::LearnedOrtho] {
            let mut rng = ChaCha8Rng::seed_from_u64(16);
            let mut store = ParamStore::new();
            let cfg = WfLayerConfig {
                encoders: 1,
                dim: 8,
                heads: 2,
                j_scales: 2,
                kernel: KernelFamily::MexicanHat,
                basis_mode: mode,
                k: 4,
            };
            let wf = WfLayer::new(&mut store, "wf", 16, cfg, &mut rng).unwrap();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let feats = tape.leaf(16, 8, (0..128).map(|i| (i as f64 * 0.3).cos()).collect());
            let (out, _) = wf
                .forward(&mut tape, &store, &mut bind, &positions, feats)
                .unwrap();
            outs.push(tape.shape(out));
        }
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn scale_permutation_permutes_concat_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let cfg = WfLayerConfig {
            encoders: 2,
            dim: 6,
            heads: 2,
            j_scales: 2,
            kernel: KernelFamily::MexicanHat,
            basis_mode: BasisMode::ExactEig,
            k: 3,
        };
        let n = 7usize;
        let wf = WfLayer::new(&mut store, "wf", n, cfg, &mut rng).unwrap();
        let tokens = 3usize;
        let dim = 6usize;
        let mut data = Vec::new();
        for i in 0..n * tokens * dim {
            data.push(((i * 37 + 5) % 19) as f64 / 19.0 - 0.4);
        }

        // encoder stage with tokens in the given order
        let run = |perm: &[usize]| -> Vec<f64> {
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let mut permuted = vec![0.0; data.len()];
            for v in 0..n {
                for (slot, &src) in perm.iter().enumerate() {
                    for c in 0..dim {
                        permuted[(v * tokens + slot) * dim + c] = data[(v * tokens + src) * dim + c];
                    }
                }
            }
            let x = tape.leaf(n * tokens, dim, permuted);
            let mut cur = x;
            // run only the encoders and reshape; skip the projection so the
            // block structure stays visible
            for enc in 0..2 {
                let _ = enc;
            }
            let out = wf.encode_and_project(&mut tape, &store, &mut bind, cur, tokens, n);
            let _ = out;
            // recompute without projection: reuse internal encoders via
            // encode path on a fresh tape is not exposed; instead compare the
            // reshaped encoder output by re-running manually
            let mut tape2 = Tape::new();
            let mut bind2 = Bindings::new();
            let x2 = tape2.leaf(n * tokens, dim, tape.values(x).to_vec());
            cur = x2;
            for enc in &wf_encoders(&wf) {
                cur = enc.forward(&mut tape2, &store, &mut bind2, cur, tokens);
            }
            tape2.values(cur).to_vec()
        };

        let base = run(&[0, 1, 2]);
        let permuted = run(&[2, 0, 1]);
        // encoder output tokens permute with input tokens
        for v in 0..n {
            for (slot, &src) in [2usize, 0, 1].iter().enumerate() {
                for c in 0..dim {
                    let a = permuted[(v * tokens + slot) * dim + c];
                    let b = base[(v * tokens + src) * dim + c];
                    assert!(
                        (a - b).abs() < 1e-12,
                        "token equivariance violated at v={v} slot={slot} c={c}"
                    );
                }
            }
        }
    }

    fn wf_encoders(wf: &WfLayer) -> Vec<EncoderLayer> {
        wf.encoders.clone()
    }

    #[test]
    fn spectral_filter_layers() {
        use crate::graph::{build_knn_graph, eigendecompose, SigmaMode};
        let positions = random_cloud(10, 31);
        let pc = crate::cloud::PointCloud::from_positions(positions);
        let graph = build_knn_graph(&pc, 3, SigmaMode::MeanKnnDist).unwrap();
        let basis = eigendecompose(&graph.laplacian, 1e-10).unwrap();
        let scales = select_scales(2.0, 2);
        let frame = build_frame(&basis, crate::wavelets::mexican_hat_kernels(), &scales).unwrap();
        let n = 10;

        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let fdata: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();

        // identity filters + identity activation reproduce the signal through
        // the wavelet path (exact reconstruction)
        let mut tape = Tape::new();
        let f = tape.leaf(n, 2, fdata.clone());
        let ones: Vec<TensorId> = (0..3).map(|_| tape.ones(n, 1)).collect();
        let out = spectral_filter_wavelet(&mut tape, &frame, &ones, f, Activation::Identity).unwrap();
        let max_dev = tape
            .values(out)
            .iter()
            .zip(&fdata)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-8, "identity wavelet filter deviates {max_dev}");

        // zero filter gives sigma(0)
        let mut tape = Tape::new();
        let f = tape.leaf(n, 2, fdata.clone());
        let zeros: Vec<TensorId> = (0..3).map(|_| tape.zeros(n, 1)).collect();
        let out = spectral_filter_wavelet(&mut tape, &frame, &zeros, f, Activation::Relu).unwrap();
        assert!(tape.values(out).iter().all(|&v| v == 0.0));

        // Fourier path composes to spectral_convolution + activation
        let theta: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
        let mut tape = Tape::new();
        let f = tape.leaf(n, 2, fdata.clone());
        let th = tape.leaf(n, 1, theta.clone());
        let out = spectral_filter_fourier(&mut tape, &basis, th, f, Activation::Tanh).unwrap();
        let fmat = crate::linalg::Mat::from_vec(n, 2, fdata);
        let reference = spectral_convolution(&basis, &theta, &fmat).unwrap();
        for i in 0..n {
            for c in 0..2 {
                let want = reference.get(i, c).tanh();
                let got = tape.value_at(out, i, c);
                assert!((want - got).abs() < 1e-10);
            }
        }

        // and the Fourier round trip itself is tight
        let fhat = graph_fourier(&basis, &fmat).unwrap();
        let back = inverse_graph_fourier(&basis, &fhat).unwrap();
        assert!(back.sub(&fmat).max_abs() < 1e-10);
    }
}
