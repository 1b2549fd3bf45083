//! Minimal reverse-mode automatic differentiation on a flat tape.
//!
//! Every op computes its value eagerly and records enough to run the
//! backward pass in one reverse sweep over the tape (nodes are appended in
//! topological order by construction). Tensors are dense 2D `f64`; a scalar
//! is a 1x1 tensor. Grouped variants (block-local matmuls, pooling, head
//! split/merge) cover batched attention without a third dimension.
//!
//! Shape mismatches are programming errors and panic; non-finite forward
//! values are runtime data errors and poison the tape, which the training
//! loop surfaces as an error with epoch/batch coordinates.

use crate::wavelets::KernelPair;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Which half of a kernel pair an elementwise map applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPart {
    Scaling,
    Wavelet,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    MatMulTN { a: TensorId, b: TensorId },
    MatMulNT { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddScalar { a: TensorId },
    MulScalar { a: TensorId, c: f64 },
    Tanh { a: TensorId },
    Exp { a: TensorId },
    Relu { a: TensorId },
    Sqrt { a: TensorId },
    Recip { a: TensorId },
    SoftmaxRows { a: TensorId },
    LayerNormRows { a: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    ConcatRows { parts: Vec<TensorId> },
    GatherRows { a: TensorId, idx: Vec<usize> },
    GroupMaxPool { a: TensorId },
    GroupMatMulNT { x: TensorId, y: TensorId, tokens: usize },
    GroupMatMulNN { s: TensorId, v: TensorId, tokens: usize },
    SplitHeads { a: TensorId, tokens: usize, heads: usize },
    MergeHeads { a: TensorId, tokens: usize, heads: usize },
    RowScale { a: TensorId, v: TensorId },
    ColScale { a: TensorId, v: TensorId },
    ColAdd { a: TensorId, v: TensorId },
    ScaleByNode { a: TensorId, s: TensorId },
    SumAll { a: TensorId },
    L1 { a: TensorId },
    Reshape { a: TensorId },
    Transpose { a: TensorId },
    CrossEntropyMean { logits: TensorId, targets: Vec<usize> },
    KernelMap { a: TensorId, kernels: KernelPair, part: KernelPart, scale: f64 },
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    /// op-specific stash (layer-norm inverse stds)
    aux: Vec<f64>,
    /// op-specific index stash (max-pool argmaxes)
    aux_idx: Vec<usize>,
}

/// The tape: values, gradients, and the op graph of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<String>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the first op that produced a non-finite value, if any.
    pub fn first_nonfinite(&self) -> Option<&str> {
        self.nonfinite.as_deref()
    }

    pub fn shape(&self, t: TensorId) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].values
    }

    pub fn grad(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].grad
    }

    pub fn value_at(&self, t: TensorId, i: usize, j: usize) -> f64 {
        let n = &self.nodes[t.0];
        n.values[i * n.cols + j]
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op) -> TensorId {
        self.push_with_aux(rows, cols, values, op, Vec::new(), Vec::new())
    }

    fn push_with_aux(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        op: Op,
        aux: Vec<f64>,
        aux_idx: Vec<usize>,
    ) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        if self.nonfinite.is_none() && values.iter().any(|v| !v.is_finite()) {
            self.nonfinite = Some(op_name(&op).to_string());
        }
        let grad = vec![0.0; rows * cols];
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            op,
            aux,
            aux_idx,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> TensorId {
        self.push(rows, cols, values, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(1, 1, vec![v])
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.leaf(rows, cols, vec![0.0; rows * cols])
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> TensorId {
        self.leaf(rows, cols, vec![1.0; rows * cols])
    }

    pub fn eye(&mut self, n: usize) -> TensorId {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        self.leaf(n, n, v)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, rb, "matmul: {ra}x{ca} * {rb}x{cb}");
        let mut out = vec![0.0; ra * cb];
        crate::linalg::matmul_into(
            &self.nodes[a.0].values,
            ra,
            ca,
            &self.nodes[b.0].values,
            cb,
            &mut out,
        );
        self.push(ra, cb, out, Op::MatMul { a, b })
    }

    /// `a^T * b`.
    pub fn matmul_tn(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "matmul_tn: {ra}x{ca} vs {rb}x{cb}");
        let mut out = vec![0.0; ca * cb];
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        for k in 0..ra {
            let arow = &av[k * ca..(k + 1) * ca];
            let brow = &bv[k * cb..(k + 1) * cb];
            for (i, &aki) in arow.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let orow = &mut out[i * cb..(i + 1) * cb];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aki * bkj;
                }
            }
        }
        self.push(ca, cb, out, Op::MatMulTN { a, b })
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, cb, "matmul_nt: {ra}x{ca} vs {rb}x{cb}");
        let mut out = vec![0.0; ra * rb];
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        for i in 0..ra {
            let arow = &av[i * ca..(i + 1) * ca];
            for j in 0..rb {
                out[i * rb + j] = crate::linalg::dot(arow, &bv[j * cb..(j + 1) * cb]);
            }
        }
        self.push(ra, rb, out, Op::MatMulNT { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> TensorId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!((ra, ca), (rb, cb), "elementwise shape mismatch");
        let out = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(ra, ca, out, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_elementwise(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_elementwise(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_elementwise(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn map_elementwise(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].values.iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        self.map_elementwise(a, |x| x + c, Op::AddScalar { a })
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        self.map_elementwise(a, |x| x * c, Op::MulScalar { a, c })
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.mul_scalar(a, -1.0)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.map_elementwise(a, f64::tanh, Op::Tanh { a })
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.map_elementwise(a, f64::exp, Op::Exp { a })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.map_elementwise(a, |x| x.max(0.0), Op::Relu { a })
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.map_elementwise(a, f64::sqrt, Op::Sqrt { a })
    }

    pub fn recip(&mut self, a: TensorId) -> TensorId {
        self.map_elementwise(a, |x| 1.0 / x, Op::Recip { a })
    }

    /// Elementwise `h(scale * x)` or `g(scale * x)` for a kernel pair.
    pub fn kernel_map(
        &mut self,
        a: TensorId,
        kernels: KernelPair,
        part: KernelPart,
        scale: f64,
    ) -> TensorId {
        let f = move |x: f64| match part {
            KernelPart::Scaling => kernels.h(scale * x),
            KernelPart::Wavelet => kernels.g(scale * x),
        };
        self.map_elementwise(a, f, Op::KernelMap { a, kernels, part, scale })
    }

    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].values[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut sum = 0.0;
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= sum;
            }
        }
        self.push(r, c, out, Op::SoftmaxRows { a })
    }

    /// Row-wise layer normalization without the affine part; scale/shift are
    /// separate `col_scale`/`col_add` ops so their parameters stay ordinary
    /// leaves.
    pub fn layer_norm_rows(&mut self, a: TensorId, eps: f64) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &self.nodes[a.0].values[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * istd;
            }
        }
        self.push_with_aux(r, c, out, Op::LayerNormRows { a }, inv_std, Vec::new())
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let (rp, cp) = self.shape(p);
                assert_eq!(rp, r, "concat_cols row mismatch");
                out.extend_from_slice(&self.nodes[p.0].values[i * cp..(i + 1) * cp]);
            }
        }
        self.push(r, total, out, Op::ConcatCols { parts: parts.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let c = self.shape(parts[0]).1;
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(total * c);
        for &p in parts {
            let (_, cp) = self.shape(p);
            assert_eq!(cp, c, "concat_rows col mismatch");
            out.extend_from_slice(&self.nodes[p.0].values);
        }
        self.push(total, c, out, Op::ConcatRows { parts: parts.to_vec() })
    }

    /// Select rows by index (duplicates allowed); the backward pass
    /// scatter-adds into the source rows.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows index {i} out of {r}");
            out.extend_from_slice(&self.nodes[a.0].values[i * c..(i + 1) * c]);
        }
        self.push(idx.len(), c, out, Op::GatherRows { a, idx: idx.to_vec() })
    }

    /// Max over each consecutive block of `group` rows, per column.
    /// Ties route the gradient to the lowest row index.
    pub fn group_max_pool(&mut self, a: TensorId, group: usize) -> TensorId {
        let (r, c) = self.shape(a);
        assert!(group >= 1 && r % group == 0, "group_max_pool: {r} rows / {group}");
        let g = r / group;
        let mut out = vec![f64::NEG_INFINITY; g * c];
        let mut arg = vec![0usize; g * c];
        for b in 0..g {
            for t in 0..group {
                let row = b * group + t;
                for j in 0..c {
                    let v = self.nodes[a.0].values[row * c + j];
                    if v > out[b * c + j] {
                        out[b * c + j] = v;
                        arg[b * c + j] = row;
                    }
                }
            }
        }
        self.push_with_aux(g, c, out, Op::GroupMaxPool { a }, Vec::new(), arg)
    }

    /// Block-local `X_g Y_g^T` for consecutive groups of `tokens` rows.
    pub fn group_matmul_nt(&mut self, x: TensorId, y: TensorId, tokens: usize) -> TensorId {
        let (rx, cx) = self.shape(x);
        let (ry, cy) = self.shape(y);
        assert_eq!(rx, ry);
        assert_eq!(cx, cy);
        assert!(rx % tokens == 0);
        let groups = rx / tokens;
        let mut out = vec![0.0; rx * tokens];
        let xv = &self.nodes[x.0].values;
        let yv = &self.nodes[y.0].values;
        for g in 0..groups {
            for i in 0..tokens {
                let xi = &xv[(g * tokens + i) * cx..(g * tokens + i + 1) * cx];
                for j in 0..tokens {
                    let yj = &yv[(g * tokens + j) * cx..(g * tokens + j + 1) * cx];
                    out[(g * tokens + i) * tokens + j] = crate::linalg::dot(xi, yj);
                }
            }
        }
        self.push(rx, tokens, out, Op::GroupMatMulNT { x, y, tokens })
    }

    /// Block-local `S_g V_g` where `s` is `(G*T) x T` and `v` is `(G*T) x d`.
    pub fn group_matmul_nn(&mut self, s: TensorId, v: TensorId, tokens: usize) -> TensorId {
        let (rs, cs) = self.shape(s);
        let (rv, cv) = self.shape(v);
        assert_eq!(cs, tokens);
        assert_eq!(rs, rv);
        assert!(rs % tokens == 0);
        let groups = rs / tokens;
        let mut out = vec![0.0; rv * cv];
        let sv = &self.nodes[s.0].values;
        let vv = &self.nodes[v.0].values;
        for g in 0..groups {
            for i in 0..tokens {
                let srow = &sv[(g * tokens + i) * tokens..(g * tokens + i + 1) * tokens];
                let orow = &mut out[(g * tokens + i) * cv..(g * tokens + i + 1) * cv];
                for (j, &sij) in srow.iter().enumerate() {
                    if sij == 0.0 {
                        continue;
                    }
                    let vrow = &vv[(g * tokens + j) * cv..(g * tokens + j + 1) * cv];
                    for (o, &vjk) in orow.iter_mut().zip(vrow) {
                        *o += sij * vjk;
                    }
                }
            }
        }
        self.push(rv, cv, out, Op::GroupMatMulNN { s, v, tokens })
    }

    /// `(G*T) x (H*dh)` -> `(G*H*T) x dh`: regroup so each (group, head)
    /// becomes its own attention block.
    pub fn split_heads(&mut self, a: TensorId, tokens: usize, heads: usize) -> TensorId {
        let (r, c) = self.shape(a);
        assert!(r % tokens == 0 && c % heads == 0);
        let groups = r / tokens;
        let dh = c / heads;
        let mut out = vec![0.0; r * c];
        let av = &self.nodes[a.0].values;
        for g in 0..groups {
            for h in 0..heads {
                for t in 0..tokens {
                    let src = (g * tokens + t) * c + h * dh;
                    let dst = ((g * heads + h) * tokens + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&av[src..src + dh]);
                }
            }
        }
        self.push(groups * heads * tokens, dh, out, Op::SplitHeads { a, tokens, heads })
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, a: TensorId, tokens: usize, heads: usize) -> TensorId {
        let (r, dh) = self.shape(a);
        assert!(r % (tokens * heads) == 0);
        let groups = r / (tokens * heads);
        let c = heads * dh;
        let mut out = vec![0.0; groups * tokens * c];
        let av = &self.nodes[a.0].values;
        for g in 0..groups {
            for h in 0..heads {
                for t in 0..tokens {
                    let src = ((g * heads + h) * tokens + t) * dh;
                    let dst = (g * tokens + t) * c + h * dh;
                    out[dst..dst + dh].copy_from_slice(&av[src..src + dh]);
                }
            }
        }
        self.push(groups * tokens, c, out, Op::MergeHeads { a, tokens, heads })
    }

    /// Scale row `i` of `a` by `v[i]` (`v` is `n x 1`).
    pub fn row_scale(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let (rv, cv) = self.shape(v);
        assert_eq!((rv, cv), (r, 1), "row_scale expects an {r}x1 vector");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let s = self.nodes[v.0].values[i];
            for j in 0..c {
                out[i * c + j] = self.nodes[a.0].values[i * c + j] * s;
            }
        }
        self.push(r, c, out, Op::RowScale { a, v })
    }

    /// Multiply each row of `a` elementwise by the `1 x c` vector `v`.
    pub fn col_scale(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let (rv, cv) = self.shape(v);
        assert_eq!((rv, cv), (1, c), "col_scale expects a 1x{c} vector");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = self.nodes[a.0].values[i * c + j] * self.nodes[v.0].values[j];
            }
        }
        self.push(r, c, out, Op::ColScale { a, v })
    }

    /// Add the `1 x c` vector `v` to each row of `a` (bias broadcast).
    pub fn col_add(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let (rv, cv) = self.shape(v);
        assert_eq!((rv, cv), (1, c), "col_add expects a 1x{c} vector");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = self.nodes[a.0].values[i * c + j] + self.nodes[v.0].values[j];
            }
        }
        self.push(r, c, out, Op::ColAdd { a, v })
    }

    /// Multiply a tensor by a scalar node (1x1).
    pub fn scale_by(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.shape(s), (1, 1), "scale_by expects a scalar node");
        let (r, c) = self.shape(a);
        let sv = self.nodes[s.0].values[0];
        let out = self.nodes[a.0].values.iter().map(|&x| x * sv).collect();
        self.push(r, c, out, Op::ScaleByNode { a, s })
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        self.push(1, 1, vec![total], Op::SumAll { a })
    }

    /// L1 norm; the subgradient at 0 is taken as 0.
    pub fn l1_norm(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].values.iter().map(|v| v.abs()).sum();
        self.push(1, 1, vec![total], Op::L1 { a })
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape element count mismatch");
        let out = self.nodes[a.0].values.clone();
        self.push(rows, cols, out, Op::Reshape { a })
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.nodes[a.0].values[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose { a })
    }

    /// Mean cross-entropy of row-wise logits against integer targets.
    pub fn cross_entropy_mean(&mut self, logits: TensorId, targets: &[usize]) -> TensorId {
        let (r, c) = self.shape(logits);
        assert_eq!(r, targets.len(), "one target per logits row");
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "target class {t} out of {c}");
            let row = &self.nodes[logits.0].values[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= r as f64;
        self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropyMean { logits, targets: targets.to_vec() },
        )
    }

    /// Seed `d loss / d loss = 1` and run the reverse sweep.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = 0.0;
            }
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (ra, ca) = self.shape(a);
                    let (_, cb) = self.shape(b);
                    // da += dC * B^T ; db += A^T * dC
                    let dc = std::mem::take(&mut self.nodes[i].grad);
                    {
                        let bv = &self.nodes[b.0].values;
                        let mut da = vec![0.0; ra * ca];
                        for r in 0..ra {
                            for k in 0..ca {
                                da[r * ca + k] = crate::linalg::dot(
                                    &dc[r * cb..(r + 1) * cb],
                                    &bv[k * cb..(k + 1) * cb],
                                );
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &da);
                    }
                    {
                        let av = &self.nodes[a.0].values;
                        let mut db = vec![0.0; ca * cb];
                        for r in 0..ra {
                            let arow = &av[r * ca..(r + 1) * ca];
                            let dcrow = &dc[r * cb..(r + 1) * cb];
                            for (k, &ark) in arow.iter().enumerate() {
                                if ark == 0.0 {
                                    continue;
                                }
                                let dbrow = &mut db[k * cb..(k + 1) * cb];
                                for (o, &d) in dbrow.iter_mut().zip(dcrow) {
                                    *o += ark * d;
                                }
                            }
                        }
                        accumulate(&mut self.nodes[b.0].grad, &db);
                    }
                    self.nodes[i].grad = dc;
                }
                Op::MatMulTN { a, b } => {
                    // C = A^T B: da += B dC^T ; db += A dC
                    let (ra, ca) = self.shape(a);
                    let (_, cb) = self.shape(b);
                    let dc = std::mem::take(&mut self.nodes[i].grad); // ca x cb
                    {
                        let bv = &self.nodes[b.0].values;
                        let mut da = vec![0.0; ra * ca];
                        for k in 0..ra {
                            for ii in 0..ca {
                                da[k * ca + ii] = crate::linalg::dot(
                                    &bv[k * cb..(k + 1) * cb],
                                    &dc[ii * cb..(ii + 1) * cb],
                                );
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &da);
                    }
                    {
                        let av = &self.nodes[a.0].values;
                        let mut db = vec![0.0; ra * cb];
                        for k in 0..ra {
                            let arow = &av[k * ca..(k + 1) * ca];
                            let dbrow = &mut db[k * cb..(k + 1) * cb];
                            for (ii, &aki) in arow.iter().enumerate() {
                                if aki == 0.0 {
                                    continue;
                                }
                                let dcrow = &dc[ii * cb..(ii + 1) * cb];
                                for (o, &d) in dbrow.iter_mut().zip(dcrow) {
                                    *o += aki * d;
                                }
                            }
                        }
                        accumulate(&mut self.nodes[b.0].grad, &db);
                    }
                    self.nodes[i].grad = dc;
                }
                Op::MatMulNT { a, b } => {
                    // C = A B^T: da += dC B ; db += dC^T A
                    let (ra, ca) = self.shape(a);
                    let (rb, _) = self.shape(b);
                    let dc = std::mem::take(&mut self.nodes[i].grad); // ra x rb
                    {
                        let bv = &self.nodes[b.0].values;
                        let mut da = vec![0.0; ra * ca];
                        for r in 0..ra {
                            let dcrow = &dc[r * rb..(r + 1) * rb];
                            let darow = &mut da[r * ca..(r + 1) * ca];
                            for (j, &d) in dcrow.iter().enumerate() {
                                if d == 0.0 {
                                    continue;
                                }
                                let brow = &bv[j * ca..(j + 1) * ca];
                                for (o, &bjk) in darow.iter_mut().zip(brow) {
                                    *o += d * bjk;
                                }
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &da);
                    }
                    {
                        let av = &self.nodes[a.0].values;
                        let mut db = vec![0.0; rb * ca];
                        for r in 0..ra {
                            let dcrow = &dc[r * rb..(r + 1) * rb];
                            let arow = &av[r * ca..(r + 1) * ca];
                            for (j, &d) in dcrow.iter().enumerate() {
                                if d == 0.0 {
                                    continue;
                                }
                                let dbrow = &mut db[j * ca..(j + 1) * ca];
                                for (o, &ark) in dbrow.iter_mut().zip(arow) {
                                    *o += d * ark;
                                }
                            }
                        }
                        accumulate(&mut self.nodes[b.0].grad, &db);
                    }
                    self.nodes[i].grad = dc;
                }
                Op::Add { a, b } => {
                    let dc = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &dc);
                    accumulate(&mut self.nodes[b.0].grad, &dc);
                }
                Op::Sub { a, b } => {
                    let dc = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &dc);
                    for (g, d) in self.nodes[b.0].grad.iter_mut().zip(&dc) {
                        *g -= d;
                    }
                }
                Op::Mul { a, b } => {
                    let dc = self.nodes[i].grad.clone();
                    let bv = self.nodes[b.0].values.clone();
                    for ((g, d), v) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&bv) {
                        *g += d * v;
                    }
                    let av = self.nodes[a.0].values.clone();
                    for ((g, d), v) in self.nodes[b.0].grad.iter_mut().zip(&dc).zip(&av) {
                        *g += d * v;
                    }
                }
                Op::AddScalar { a } => {
                    let dc = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &dc);
                }
                Op::MulScalar { a, c } => {
                    let dc = self.nodes[i].grad.clone();
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&dc) {
                        *g += c * d;
                    }
                }
                Op::Tanh { a } => {
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&yv) {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Exp { a } => {
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&yv) {
                        *g += d * y;
                    }
                }
                Op::Relu { a } => {
                    let dc = self.nodes[i].grad.clone();
                    let xv = self.nodes[a.0].values.clone();
                    for ((g, d), x) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&xv) {
                        if *x > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Sqrt { a } => {
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&yv) {
                        *g += d * 0.5 / y;
                    }
                }
                Op::Recip { a } => {
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&yv) {
                        *g -= d * y * y;
                    }
                }
                Op::KernelMap { a, kernels, part, scale } => {
                    let dc = self.nodes[i].grad.clone();
                    let xv = self.nodes[a.0].values.clone();
                    for ((g, d), x) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&xv) {
                        let slope = match part {
                            KernelPart::Scaling => kernels.dh(scale * x),
                            KernelPart::Wavelet => kernels.dg(scale * x),
                        };
                        *g += d * slope * scale;
                    }
                }
                Op::SoftmaxRows { a } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    let mut da = vec![0.0; r * c];
                    for row in 0..r {
                        let y = &yv[row * c..(row + 1) * c];
                        let dy = &dc[row * c..(row + 1) * c];
                        let inner: f64 = y.iter().zip(dy).map(|(&yi, &di)| yi * di).sum();
                        for j in 0..c {
                            da[row * c + j] = y[j] * (dy[j] - inner);
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &da);
                }
                Op::LayerNormRows { a } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    let yv = self.nodes[i].values.clone();
                    let inv_std = self.nodes[i].aux.clone();
                    let mut da = vec![0.0; r * c];
                    let nf = c as f64;
                    for row in 0..r {
                        let y = &yv[row * c..(row + 1) * c];
                        let dy = &dc[row * c..(row + 1) * c];
                        let mean_dy: f64 = dy.iter().sum::<f64>() / nf;
                        let mean_dy_y: f64 =
                            dy.iter().zip(y).map(|(&d, &x)| d * x).sum::<f64>() / nf;
                        for j in 0..c {
                            da[row * c + j] = inv_std[row] * (dy[j] - mean_dy - y[j] * mean_dy_y);
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &da);
                }
                Op::ConcatCols { parts } => {
                    let (r, _) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    let total = self.nodes[i].cols;
                    let mut offset = 0;
                    for &p in &parts {
                        let (_, cp) = self.shape(p);
                        for row in 0..r {
                            let src = &dc[row * total + offset..row * total + offset + cp];
                            let dst = &mut self.nodes[p.0].grad[row * cp..(row + 1) * cp];
                            for (g, d) in dst.iter_mut().zip(src) {
                                *g += d;
                            }
                        }
                        offset += cp;
                    }
                }
                Op::ConcatRows { parts } => {
                    let dc = self.nodes[i].grad.clone();
                    let c = self.nodes[i].cols;
                    let mut offset = 0;
                    for &p in &parts {
                        let (rp, _) = self.shape(p);
                        let src = &dc[offset * c..(offset + rp) * c];
                        accumulate(&mut self.nodes[p.0].grad, src);
                        offset += rp;
                    }
                }
                Op::GatherRows { a, idx } => {
                    let c = self.nodes[i].cols;
                    let dc = self.nodes[i].grad.clone();
                    for (out_row, &src_row) in idx.iter().enumerate() {
                        let src = &dc[out_row * c..(out_row + 1) * c];
                        let dst = &mut self.nodes[a.0].grad[src_row * c..(src_row + 1) * c];
                        for (g, d) in dst.iter_mut().zip(src) {
                            *g += d;
                        }
                    }
                }
                Op::GroupMaxPool { a } => {
                    let c = self.nodes[i].cols;
                    let g_rows = self.nodes[i].rows;
                    let dc = self.nodes[i].grad.clone();
                    let arg = self.nodes[i].aux_idx.clone();
                    for b in 0..g_rows {
                        for j in 0..c {
                            let row = arg[b * c + j];
                            self.nodes[a.0].grad[row * c + j] += dc[b * c + j];
                        }
                    }
                }
                Op::GroupMatMulNT { x, y, tokens } => {
                    // S_g = X_g Y_g^T: dX_g += dS_g Y_g ; dY_g += dS_g^T X_g
                    let (rx, cx) = self.shape(x);
                    let groups = rx / tokens;
                    let ds = std::mem::take(&mut self.nodes[i].grad);
                    {
                        let yv = &self.nodes[y.0].values;
                        let mut dx = vec![0.0; rx * cx];
                        for g in 0..groups {
                            for ii in 0..tokens {
                                let dsrow = &ds
                                    [(g * tokens + ii) * tokens..(g * tokens + ii + 1) * tokens];
                                let dxrow =
                                    &mut dx[(g * tokens + ii) * cx..(g * tokens + ii + 1) * cx];
                                for (j, &d) in dsrow.iter().enumerate() {
                                    if d == 0.0 {
                                        continue;
                                    }
                                    let yrow =
                                        &yv[(g * tokens + j) * cx..(g * tokens + j + 1) * cx];
                                    for (o, &yk) in dxrow.iter_mut().zip(yrow) {
                                        *o += d * yk;
                                    }
                                }
                            }
                        }
                        accumulate(&mut self.nodes[x.0].grad, &dx);
                    }
                    {
                        let xv = &self.nodes[x.0].values;
                        let mut dy = vec![0.0; rx * cx];
                        for g in 0..groups {
                            for ii in 0..tokens {
                                let dsrow = &ds
                                    [(g * tokens + ii) * tokens..(g * tokens + ii + 1) * tokens];
                                let xrow = &xv[(g * tokens + ii) * cx..(g * tokens + ii + 1) * cx];
                                for (j, &d) in dsrow.iter().enumerate() {
                                    if d == 0.0 {
                                        continue;
                                    }
                                    let dyrow =
                                        &mut dy[(g * tokens + j) * cx..(g * tokens + j + 1) * cx];
                                    for (o, &xk) in dyrow.iter_mut().zip(xrow) {
                                        *o += d * xk;
                                    }
                                }
                            }
                        }
                        accumulate(&mut self.nodes[y.0].grad, &dy);
                    }
                    self.nodes[i].grad = ds;
                }
                Op::GroupMatMulNN { s, v, tokens } => {
                    // O_g = S_g V_g: dS_g += dO_g V_g^T ; dV_g += S_g^T dO_g
                    let (rv, cv) = self.shape(v);
                    let groups = rv / tokens;
                    let do_ = std::mem::take(&mut self.nodes[i].grad);
                    {
                        let vv = &self.nodes[v.0].values;
                        let mut dsg = vec![0.0; rv * tokens];
                        for g in 0..groups {
                            for ii in 0..tokens {
                                let dorow =
                                    &do_[(g * tokens + ii) * cv..(g * tokens + ii + 1) * cv];
                                for j in 0..tokens {
                                    let vrow =
                                        &vv[(g * tokens + j) * cv..(g * tokens + j + 1) * cv];
                                    dsg[(g * tokens + ii) * tokens + j] =
                                        crate::linalg::dot(dorow, vrow);
                                }
                            }
                        }
                        accumulate(&mut self.nodes[s.0].grad, &dsg);
                    }
                    {
                        let sv = &self.nodes[s.0].values;
                        let mut dv = vec![0.0; rv * cv];
                        for g in 0..groups {
                            for ii in 0..tokens {
                                let srow = &sv
                                    [(g * tokens + ii) * tokens..(g * tokens + ii + 1) * tokens];
                                let dorow =
                                    &do_[(g * tokens + ii) * cv..(g * tokens + ii + 1) * cv];
                                for (j, &sij) in srow.iter().enumerate() {
                                    if sij == 0.0 {
                                        continue;
                                    }
                                    let dvrow =
                                        &mut dv[(g * tokens + j) * cv..(g * tokens + j + 1) * cv];
                                    for (o, &d) in dvrow.iter_mut().zip(dorow) {
                                        *o += sij * d;
                                    }
                                }
                            }
                        }
                        accumulate(&mut self.nodes[v.0].grad, &dv);
                    }
                    self.nodes[i].grad = do_;
                }
                Op::SplitHeads { a, tokens, heads } => {
                    let dh = self.nodes[i].cols;
                    let c = heads * dh;
                    let groups = self.nodes[i].rows / (heads * tokens);
                    let dc = self.nodes[i].grad.clone();
                    for g in 0..groups {
                        for h in 0..heads {
                            for t in 0..tokens {
                                let src = ((g * heads + h) * tokens + t) * dh;
                                let dst = (g * tokens + t) * c + h * dh;
                                for k in 0..dh {
                                    self.nodes[a.0].grad[dst + k] += dc[src + k];
                                }
                            }
                        }
                    }
                }
                Op::MergeHeads { a, tokens, heads } => {
                    let c = self.nodes[i].cols;
                    let dh = c / heads;
                    let groups = self.nodes[i].rows / tokens;
                    let dc = self.nodes[i].grad.clone();
                    for g in 0..groups {
                        for h in 0..heads {
                            for t in 0..tokens {
                                let src = (g * tokens + t) * c + h * dh;
                                let dst = ((g * heads + h) * tokens + t) * dh;
                                for k in 0..dh {
                                    self.nodes[a.0].grad[dst + k] += dc[src + k];
                                }
                            }
                        }
                    }
                }
                Op::RowScale { a, v } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    let vv = self.nodes[v.0].values.clone();
                    let av = self.nodes[a.0].values.clone();
                    for row in 0..r {
                        let s = vv[row];
                        let mut dv = 0.0;
                        for j in 0..c {
                            self.nodes[a.0].grad[row * c + j] += dc[row * c + j] * s;
                            dv += dc[row * c + j] * av[row * c + j];
                        }
                        self.nodes[v.0].grad[row] += dv;
                    }
                }
                Op::ColScale { a, v } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    let vv = self.nodes[v.0].values.clone();
                    let av = self.nodes[a.0].values.clone();
                    for row in 0..r {
                        for j in 0..c {
                            self.nodes[a.0].grad[row * c + j] += dc[row * c + j] * vv[j];
                            self.nodes[v.0].grad[j] += dc[row * c + j] * av[row * c + j];
                        }
                    }
                }
                Op::ColAdd { a, v } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &dc);
                    for row in 0..r {
                        for j in 0..c {
                            self.nodes[v.0].grad[j] += dc[row * c + j];
                        }
                    }
                }
                Op::ScaleByNode { a, s } => {
                    let dc = self.nodes[i].grad.clone();
                    let sv = self.nodes[s.0].values[0];
                    let av = self.nodes[a.0].values.clone();
                    let mut ds = 0.0;
                    for ((g, d), x) in self.nodes[a.0].grad.iter_mut().zip(&dc).zip(&av) {
                        *g += d * sv;
                        ds += d * x;
                    }
                    self.nodes[s.0].grad[0] += ds;
                }
                Op::SumAll { a } => {
                    let d = self.nodes[i].grad[0];
                    for g in &mut self.nodes[a.0].grad {
                        *g += d;
                    }
                }
                Op::L1 { a } => {
                    let d = self.nodes[i].grad[0];
                    let av = self.nodes[a.0].values.clone();
                    for (g, x) in self.nodes[a.0].grad.iter_mut().zip(&av) {
                        if *x > 0.0 {
                            *g += d;
                        } else if *x < 0.0 {
                            *g -= d;
                        }
                    }
                }
                Op::Reshape { a } => {
                    let dc = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &dc);
                }
                Op::Transpose { a } => {
                    let (r, c) = self.shape(TensorId(i));
                    let dc = self.nodes[i].grad.clone();
                    for ii in 0..r {
                        for j in 0..c {
                            self.nodes[a.0].grad[j * r + ii] += dc[ii * c + j];
                        }
                    }
                }
                Op::CrossEntropyMean { logits, targets } => {
                    let d = self.nodes[i].grad[0];
                    let (r, c) = self.shape(logits);
                    let lv = self.nodes[logits.0].values.clone();
                    for (row, &t) in targets.iter().enumerate() {
                        let x = &lv[row * c..(row + 1) * c];
                        let m = x.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                        let sum: f64 = x.iter().map(|&v| (v - m).exp()).sum();
                        for j in 0..c {
                            let p = (x[j] - m).exp() / sum;
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            self.nodes[logits.0].grad[row * c + j] += d * (p - onehot) / r as f64;
                        }
                    }
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (g, d) in dst.iter_mut().zip(src) {
        *g += d;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::MatMulTN { .. } => "matmul_tn",
        Op::MatMulNT { .. } => "matmul_nt",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::AddScalar { .. } => "add_scalar",
        Op::MulScalar { .. } => "mul_scalar",
        Op::Tanh { .. } => "tanh",
        Op::Exp { .. } => "exp",
        Op::Relu { .. } => "relu",
        Op::Sqrt { .. } => "sqrt",
        Op::Recip { .. } => "recip",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNormRows { .. } => "layer_norm_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ConcatRows { .. } => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::GroupMaxPool { .. } => "group_max_pool",
        Op::GroupMatMulNT { .. } => "group_matmul_nt",
        Op::GroupMatMulNN { .. } => "group_matmul_nn",
        Op::SplitHeads { .. } => "split_heads",
        Op::MergeHeads { .. } => "merge_heads",
        Op::RowScale { .. } => "row_scale",
        Op::ColScale { .. } => "col_scale",
        Op::ColAdd { .. } => "col_add",
        Op::ScaleByNode { .. } => "scale_by",
        Op::SumAll { .. } => "sum_all",
        Op::L1 { .. } => "l1_norm",
        Op::Reshape { .. } => "reshape",
        Op::Transpose { .. } => "transpose",
        Op::CrossEntropyMean { .. } => "cross_entropy",
        Op::KernelMap { .. } => "kernel_map",
    }
}

/// Maximum relative error between analytic gradients and central finite
/// differences, probing every element of every input.
///
/// `build` must rebuild the same scalar-valued computation from fresh leaves
/// on each call. Relative error uses `max(|fd| + |an|, 1e-6)` as denominator.
pub fn finite_diff_check(
    inputs: &[(usize, usize, Vec<f64>)],
    eps: f64,
    mut build: impl FnMut(&mut Tape, &[TensorId]) -> TensorId,
) -> f64 {
    fn eval(
        data: &[(usize, usize, Vec<f64>)],
        build: &mut dyn FnMut(&mut Tape, &[TensorId]) -> TensorId,
    ) -> (f64, Tape, Vec<TensorId>, TensorId) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = data
            .iter()
            .map(|(r, c, v)| tape.leaf(*r, *c, v.clone()))
            .collect();
        let loss = build(&mut tape, &ids);
        assert_eq!(tape.shape(loss), (1, 1), "gradcheck needs a scalar loss");
        (tape.values(loss)[0], tape, ids, loss)
    }

    let (_, mut tape, ids, loss) = eval(inputs, &mut build);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut data = inputs.to_vec();
    for (which, (_, _, values)) in inputs.iter().enumerate() {
        for k in 0..values.len() {
            let orig = data[which].2[k];
            data[which].2[k] = orig + eps;
            let (f_plus, _, _, _) = eval(&data, &mut build);
            data[which].2[k] = orig - eps;
            let (f_minus, _, _, _) = eval(&data, &mut build);
            data[which].2[k] = orig;
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let an = analytic[which][k];
            let denom = (fd.abs() + an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}
