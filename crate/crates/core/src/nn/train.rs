//! The desk-scale classifier and its training loop.
//!
//! Architecture: a stack of set-abstraction blocks, each followed by a
//! wavelet-token encoder when its centroid set is large enough to carry a
//! graph (the final single-centroid block is pure global aggregation), then
//! a small MLP head. Optimization is plain SGD with momentum; serial runs
//! are bitwise reproducible for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{synth_shape, PointCloud, ShapeFamily, ShapeSpec};
use crate::error::{Error, Result};
use crate::wavelets::KernelFamily;

use super::layers::{BasisMode, Mlp, SaLayer, SaLayerConfig, WfLayer, WfLayerConfig};
use super::params::{Bindings, ParamStore};
use super::tensor::{Tape, TensorId};

/// Training variant: which basis strategy and which regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Exact eigendecomposition per sample, no regularizer.
    Exact,
    /// Trained closed-form orthogonal basis, L1 penalty on q_eps.
    L,
    /// Free trainable basis, Frobenius penalty toward orthogonality.
    U,
    /// Chebyshev filtering with trainable coefficients, no regularizer.
    Che,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Exact => "exact",
            Variant::L => "l",
            Variant::U => "u",
            Variant::Che => "che",
        }
    }

    /// Default regularization weight: 0.05 for the L1 variant, 1.0 for the
    /// orthogonality-penalty variant, unused otherwise.
    pub fn default_beta(self) -> f64 {
        match self {
            Variant::L => 0.05,
            Variant::U => 1.0,
            Variant::Exact | Variant::Che => 0.0,
        }
    }

    fn basis_mode(self, cheb_degree: usize) -> BasisMode {
        match self {
            Variant::Exact => BasisMode::ExactEig,
            Variant::L => BasisMode::LearnedOrtho,
            Variant::U => BasisMode::FreeOrtho,
            Variant::Che => BasisMode::Chebyshev(cheb_degree),
        }
    }
}

/// Network shape knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub sa: Vec<SaLayerConfig>,
    pub encoders: usize,
    pub heads: usize,
    pub j_scales: usize,
    pub kernel: KernelFamily,
    pub cheb_degree: usize,
    pub head_hidden: usize,
    pub classes: usize,
}

impl NetConfig {
    /// The desk-scale default: three SA blocks with centroids (64, 16, 1),
    /// k = 8, channels (32, 64, 128), one encoder with 4 heads, J = 3.
    pub fn desk_default(classes: usize) -> Self {
        NetConfig {
            sa: vec![
                SaLayerConfig { centroids: 64, k: 8, out_channels: 32 },
                SaLayerConfig { centroids: 16, k: 8, out_channels: 64 },
                SaLayerConfig { centroids: 1, k: 8, out_channels: 128 },
            ],
            encoders: 1,
            heads: 4,
            j_scales: 3,
            kernel: KernelFamily::MexicanHat,
            cheb_degree: 10,
            head_hidden: 64,
            classes,
        }
    }

    /// A tiny configuration for fast tests.
    pub fn tiny(classes: usize) -> Self {
        NetConfig {
            sa: vec![
                SaLayerConfig { centroids: 16, k: 4, out_channels: 16 },
                SaLayerConfig { centroids: 1, k: 4, out_channels: 32 },
            ],
            encoders: 1,
            heads: 2,
            j_scales: 2,
            kernel: KernelFamily::MexicanHat,
            cheb_degree: 6,
            head_hidden: 16,
            classes,
        }
    }
}

struct Block {
    sa: SaLayer,
    wf: Option<WfLayer>,
}

/// The assembled classifier.
pub struct Network {
    pub store: ParamStore,
    blocks: Vec<Block>,
    head: Mlp,
    pub cfg: NetConfig,
    pub variant: Variant,
}

impl Network {
    pub fn new(cfg: &NetConfig, variant: Variant, seed: u64) -> Result<Self> {
        if cfg.sa.is_empty() {
            return Err(Error::InvalidTraining("need at least one SA block".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(cfg.sa.len());
        let mut in_channels = 3usize; // block 1 consumes raw coordinates
        for (i, sa_cfg) in cfg.sa.iter().enumerate() {
            let sa = SaLayer::new(&mut store, &format!("block{i}.sa"), in_channels, *sa_cfg, &mut rng);
            // a 1-vertex centroid set has no graph to transform; that block is
            // global aggregation only
            let wf = if sa_cfg.centroids >= 2 {
                let wf_cfg = WfLayerConfig {
                    encoders: cfg.encoders,
                    dim: sa_cfg.out_channels,
                    heads: cfg.heads,
                    j_scales: cfg.j_scales,
                    kernel: cfg.kernel,
                    basis_mode: variant.basis_mode(cfg.cheb_degree),
                    k: sa_cfg.k,
                };
                Some(WfLayer::new(
                    &mut store,
                    &format!("block{i}.wf"),
                    sa_cfg.centroids,
                    wf_cfg,
                    &mut rng,
                )?)
            } else {
                None
            };
            in_channels = sa_cfg.out_channels;
            blocks.push(Block { sa, wf });
        }
        let head = Mlp::new(
            &mut store,
            "head",
            &[in_channels, cfg.head_hidden, cfg.classes],
            false,
            &mut rng,
        );
        Ok(Network {
            store,
            blocks,
            head,
            cfg: cfg.clone(),
            variant,
        })
    }

    pub fn num_wf_layers(&self) -> usize {
        self.blocks.iter().filter(|b| b.wf.is_some()).count()
    }

    pub fn wf_layers(&self) -> impl Iterator<Item = &WfLayer> {
        self.blocks.iter().filter_map(|b| b.wf.as_ref())
    }

    /// Forward pass of one cloud; returns logits (1 x classes) and the
    /// per-layer regularizer nodes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        pc: &PointCloud,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let n = pc.len();
        let mut feat_data = Vec::with_capacity(n * 3);
        for p in &pc.positions {
            feat_data.extend_from_slice(p);
        }
        let mut feats = tape.leaf(n, 3, feat_data);
        let mut positions = pc.positions.clone();
        let mut regs = Vec::new();
        for block in &self.blocks {
            let (centroids, pooled) = block.sa.forward(tape, &self.store, bind, &positions, feats)?;
            positions = centroids;
            feats = pooled;
            if let Some(wf) = &block.wf {
                let (out, reg) = wf.forward(tape, &self.store, bind, &positions, feats)?;
                feats = out;
                if let Some(r) = reg {
                    regs.push(r);
                }
            }
        }
        // collapse any remaining centroids into one global feature
        let (rows, _) = tape.shape(feats);
        if rows > 1 {
            feats = tape.group_max_pool(feats, rows);
        }
        let logits = self.head.forward(tape, &self.store, bind, feats);
        Ok((logits, regs))
    }

    /// Predicted class of one cloud.
    pub fn predict(&self, pc: &PointCloud) -> Result<usize> {
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let (logits, _) = self.forward(&mut tape, &mut bind, pc)?;
        let row = tape.values(logits);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn accuracy(&self, set: &[PointCloud]) -> Result<f64> {
        if set.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for pc in set {
            let label = pc
                .label
                .ok_or_else(|| Error::InvalidTraining("unlabeled sample".into()))?;
            if self.predict(pc)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / set.len() as f64)
    }

    /// Current values of each WF layer's regularizer, evaluated from the
    /// stored parameters (no tape needed).
    pub fn regularizer_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let Some(wf) = &block.wf else { continue };
            match self.variant {
                Variant::L => {
                    let q = wf.qeps_param().expect("L variant has q_eps");
                    out.push(self.store.values(q).iter().map(|v| v.abs()).sum());
                }
                Variant::U => {
                    out.push(wf.free_ortho_penalty(&self.store).expect("U variant"));
                }
                Variant::Exact | Variant::Che => {}
            }
        }
        out
    }
}

/// Sum the task loss and the variant's weighted regularizers on the tape.
/// For the unregularized variants the task node is returned unchanged.
pub fn total_loss(
    tape: &mut Tape,
    task: TensorId,
    variant: Variant,
    beta: f64,
    regs: &[TensorId],
) -> TensorId {
    match variant {
        Variant::Exact | Variant::Che => task,
        Variant::L | Variant::U => {
            if regs.is_empty() || beta == 0.0 {
                return task;
            }
            let mut acc = task;
            for &r in regs {
                let weighted = tape.mul_scalar(r, beta);
                acc = tape.add(acc, weighted);
            }
            acc
        }
    }
}

/// Optimization knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Regularizer weight; `None` picks the variant default.
    pub beta: Option<f64>,
    pub seed: u64,
    /// Stop once test accuracy reaches this threshold.
    pub early_stop_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::L,
            epochs: 50,
            batch_size: 16,
            lr: 0.005,
            momentum: 0.9,
            beta: None,
            seed: 7,
            early_stop_acc: None,
        }
    }
}

/// One epoch of logged metrics. `task_loss` is the epoch mean of the
/// per-sample task loss; `reg_per_layer` is the epoch mean of each WF
/// layer's regularizer sampled before every optimizer step, so epoch one
/// starts from the initialization value.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub reg_per_layer: Vec<f64>,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochMetrics>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Serialize the metrics history as CSV (header + one row per epoch).
    pub fn metrics_csv(&self) -> String {
        let layers = self
            .history
            .first()
            .map(|m| m.reg_per_layer.len())
            .unwrap_or(0);
        let mut out = String::from("epoch,task_loss");
        for i in 0..layers {
            out.push_str(&format!(",reg_wf{}", i + 1));
        }
        out.push_str(",train_acc,test_acc\n");
        for m in &self.history {
            out.push_str(&format!("{},{}", m.epoch, m.task_loss));
            for r in &m.reg_per_layer {
                out.push_str(&format!(",{r}"));
            }
            out.push_str(&format!(",{},{}\n", m.train_acc, m.test_acc));
        }
        out
    }
}

/// Minibatch SGD training of the classifier on labeled clouds.
///
/// Deterministic for a fixed seed in this serial implementation; NaN/Inf
/// anywhere in a forward pass aborts with the epoch and batch coordinates.
pub fn train_toy(
    train: &[PointCloud],
    test: &[PointCloud],
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let classes = net_cfg.classes;
    if classes < 2 {
        return Err(Error::InvalidTraining("need at least two classes".into()));
    }
    for pc in train.iter().chain(test) {
        match pc.label {
            None => return Err(Error::InvalidTraining("unlabeled sample".into())),
            Some(l) if l >= classes => {
                return Err(Error::InvalidTraining(format!(
                    "label {l} out of {classes} classes"
                )))
            }
            _ => {}
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidTraining("empty training set".into()));
    }

    let beta = cfg.beta.unwrap_or_else(|| cfg.variant.default_beta());
    if !(beta >= 0.0) {
        return Err(Error::InvalidTraining(format!("beta = {beta} must be >= 0")));
    }
    let mut network = Network::new(net_cfg, cfg.variant, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let mut train_correct = 0usize;
        let mut reg_sums: Vec<f64> = Vec::new();
        let mut reg_batches = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            // sample the regularizers before the step so the logged curve
            // starts at the initialization value
            let regs_now = network.regularizer_values();
            if reg_sums.is_empty() {
                reg_sums = vec![0.0; regs_now.len()];
            }
            for (s, r) in reg_sums.iter_mut().zip(&regs_now) {
                *s += r;
            }
            reg_batches += 1;
            network.store.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let pc = &train[idx];
                let label = pc.label.expect("validated above");
                let mut tape = Tape::new();
                let mut bind = Bindings::new();
                let (logits, regs) = network.forward(&mut tape, &mut bind, pc)?;
                let task = tape.cross_entropy_mean(logits, &[label]);
                let loss = total_loss(&mut tape, task, cfg.variant, beta, &regs);
                if let Some(op) = tape.first_nonfinite() {
                    return Err(Error::NanLoss {
                        op: op.to_string(),
                        epoch,
                        batch: batch_no,
                    });
                }
                // running train accuracy from the optimization passes
                let row = tape.values(logits);
                let pred = (0..classes).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
                if pred == label {
                    train_correct += 1;
                }
                batch_loss += tape.values(task)[0];
                tape.backward(loss);
                bind.accumulate(&tape, &mut network.store);
            }
            let scale = 1.0 / batch.len() as f64;
            network.store.sgd_step(cfg.lr, cfg.momentum, scale);
            epoch_loss += batch_loss;
            seen += batch.len();
        }

        let task_loss = epoch_loss / seen as f64;
        let train_acc = train_correct as f64 / seen as f64;
        let test_acc = if test.is_empty() {
            0.0
        } else {
            network.accuracy(test)?
        };
        let reg_per_layer: Vec<f64> = reg_sums
            .iter()
            .map(|s| s / reg_batches.max(1) as f64)
            .collect();
        history.push(EpochMetrics {
            epoch,
            task_loss,
            reg_per_layer,
            train_acc,
            test_acc,
        });
        if let Some(threshold) = cfg.early_stop_acc {
            if test_acc >= threshold {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        network,
        history,
        stopped_early,
    })
}

/// Specification of the three-class synthetic benchmark dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthDatasetConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        SynthDatasetConfig {
            train_per_class: 200,
            test_per_class: 50,
            points: 256,
            noise_sigma: 0.02,
            seed: 11,
        }
    }
}

/// Deterministic sphere/cube/torus dataset; per-sample seeds are derived from
/// the dataset seed, class, and index.
pub fn synth_dataset(cfg: &SynthDatasetConfig) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let families = [ShapeFamily::Sphere, ShapeFamily::Cube, ShapeFamily::Torus];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, family) in families.iter().enumerate() {
        for i in 0..cfg.train_per_class + cfg.test_per_class {
            let spec = ShapeSpec {
                family: *family,
                n_points: cfg.points,
                noise_sigma: cfg.noise_sigma,
                seed: cfg
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((ci * 1_000_000 + i) as u64),
            };
            let pc = synth_shape(&spec)?;
            if i < cfg.train_per_class {
                train.push(pc);
            } else {
                test.push(pc);
            }
        }
    }
    Ok((train, test))
}
