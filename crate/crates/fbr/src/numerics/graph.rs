//! Eager reverse-mode differentiation on a flat operation tape.
//!
//! Values are computed at node-creation time; `backward` replays the tape in
//! reverse, accumulating vector-Jacobian products. Index selections (gathers,
//! slices) take fixed index lists, so anything chosen by thresholding values
//! is a stop-gradient decision by construction.

use crate::error::{FbrError, Result};
use crate::numerics::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    // vector (+,-,*,/) scalar-valued node
    BcastAdd(Var, Var),
    BcastSub(Var, Var),
    BcastMul(Var, Var),
    BcastDiv(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    MaxAll(Var),
    LogSumExp(Var),
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize },
    AddRowBias { mat: Var, bias: Var, rows: usize, cols: usize },
    Gather { src: Var, idx: Vec<usize> },
    GatherCols { src: Var, rows: usize, cols: usize, idx: Vec<usize> },
    Concat { parts: Vec<Var> },
    HStack { parts: Vec<Var>, rows: usize, col_counts: Vec<usize> },
    Slice { src: Var, offset: usize, len: usize },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    dims: Vec<usize>,
}

/// Gradients per tape node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

/// Operation tape with eagerly computed node values.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, dims: Vec<usize>) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        if let Some(bad) = value.iter().find(|v| !v.is_finite()) {
            panic!("non-finite value {bad} produced by {op:?}");
        }
        self.nodes.push(Node { op, value, dims });
        Var(self.nodes.len() - 1)
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Register a tensor as a tape leaf; its `requires_grad` flag decides
    /// whether `backward` reports a gradient for it.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf { requires_grad: t.requires_grad },
            t.data().to_vec(),
            t.shape().to_vec(),
        )
    }

    /// Detached constant vector.
    pub fn constant(&mut self, data: &[f64]) -> Var {
        self.push(Op::Leaf { requires_grad: false }, data.to_vec(), vec![data.len()])
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf { requires_grad: false }, vec![value], vec![1])
    }

    pub fn constant_shaped(&mut self, data: &[f64], dims: &[usize]) -> Var {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.push(Op::Leaf { requires_grad: false }, data.to_vec(), dims.to_vec())
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn binary_values(&self, a: Var, b: Var) -> (&[f64], &[f64]) {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise length mismatch");
        (va, vb)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary_values(a, b);
        let value = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Add(a, b), value, dims)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary_values(a, b);
        let value = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Sub(a, b), value, dims)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary_values(a, b);
        let value = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Mul(a, b), value, dims)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary_values(a, b);
        let value = va.iter().zip(vb).map(|(x, y)| x / y).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Div(a, b), value, dims)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x + c).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::AddScalar(a), value, dims)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::MulScalar(a, c), value, dims)
    }

    fn scalar_value(&self, s: Var) -> f64 {
        assert_eq!(self.nodes[s.0].value.len(), 1, "expected scalar node");
        self.nodes[s.0].value[0]
    }

    pub fn bcast_add(&mut self, v: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.nodes[v.0].value.iter().map(|x| x + sv).collect();
        let dims = self.nodes[v.0].dims.clone();
        self.push(Op::BcastAdd(v, s), value, dims)
    }

    pub fn bcast_sub(&mut self, v: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.nodes[v.0].value.iter().map(|x| x - sv).collect();
        let dims = self.nodes[v.0].dims.clone();
        self.push(Op::BcastSub(v, s), value, dims)
    }

    pub fn bcast_mul(&mut self, v: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.nodes[v.0].value.iter().map(|x| x * sv).collect();
        let dims = self.nodes[v.0].dims.clone();
        self.push(Op::BcastMul(v, s), value, dims)
    }

    pub fn bcast_div(&mut self, v: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.nodes[v.0].value.iter().map(|x| x / sv).collect();
        let dims = self.nodes[v.0].dims.clone();
        self.push(Op::BcastDiv(v, s), value, dims)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Relu(a), value, dims)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| logistic(*x)).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Sigmoid(a), value, dims)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Exp(a), value, dims)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Ln(a), value, dims)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.sqrt()).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::Sqrt(a), value, dims)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.max(floor)).collect();
        let dims = self.nodes[a.0].dims.clone();
        self.push(Op::ClampMin(a, floor), value, dims)
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![total], vec![1])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        assert!(n > 0, "mean of empty node");
        let total: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Op::Mean(a), vec![total / n as f64], vec![1])
    }

    /// Maximum over all entries; the gradient routes to the first argmax.
    pub fn max_all(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0].value.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.push(Op::MaxAll(a), vec![m], vec![1])
    }

    /// Stabilized log-sum-exp over all entries of a vector.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        assert!(!v.is_empty(), "log_sum_exp of empty node");
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
        self.push(Op::LogSumExp(a), vec![m + s.ln()], vec![1])
    }

    // ── Structured ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ad, bd) = (&self.nodes[a.0].dims, &self.nodes[b.0].dims);
        assert_eq!(ad.len(), 2, "matmul lhs must be 2-d, got {ad:?}");
        assert_eq!(bd.len(), 2, "matmul rhs must be 2-d, got {bd:?}");
        let (m, k) = (ad[0], ad[1]);
        let (k2, n) = (bd[0], bd[1]);
        assert_eq!(k, k2, "matmul inner dimension mismatch: {k} vs {k2}");
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = va[i * k + p];
                if av != 0.0 {
                    let row = &vb[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for (d, bv) in dst.iter_mut().zip(row) {
                        *d += av * bv;
                    }
                }
            }
        }
        self.push(Op::Matmul { a, b, m, k, n }, out, vec![m, n])
    }

    /// 3x3 convolution with padding 1. Input `[C,H,W]`, weight `[OC,C,3,3]`,
    /// bias `[OC]`; output `[OC, (H-1)/s+1, (W-1)/s+1]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Var {
        let idims = self.nodes[input.0].dims.clone();
        let wdims = self.nodes[weight.0].dims.clone();
        assert_eq!(idims.len(), 3, "conv input must be [C,H,W]");
        assert_eq!(wdims.len(), 4, "conv weight must be [OC,C,3,3]");
        assert_eq!(wdims[2], 3, "kernel must be 3x3");
        assert_eq!(wdims[3], 3, "kernel must be 3x3");
        assert_eq!(idims[0], wdims[1], "conv channel mismatch");
        assert!(stride >= 1);
        let (ic, ih, iw) = (idims[0], idims[1], idims[2]);
        let oc = wdims[0];
        assert_eq!(self.nodes[bias.0].value.len(), oc, "conv bias length");
        let oh = (ih - 1) / stride + 1;
        let ow = (iw - 1) / stride + 1;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..ic {
                        for ky in 0..3 {
                            let iy = (oy * stride + ky) as isize - 1;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                acc += w[((o * ic + c) * 3 + ky) * 3 + kx]
                                    * x[(c * ih + iy as usize) * iw + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        self.push(Op::Conv2d { input, weight, bias, stride }, out, vec![oc, oh, ow])
    }

    /// Add a per-row bias to a matrix: `out[i,j] = mat[i,j] + bias[i]`.
    pub fn add_row_bias(&mut self, mat: Var, bias: Var) -> Var {
        let dims = self.nodes[mat.0].dims.clone();
        assert_eq!(dims.len(), 2, "add_row_bias expects a matrix");
        let (rows, cols) = (dims[0], dims[1]);
        assert_eq!(self.nodes[bias.0].value.len(), rows, "bias length mismatch");
        let m = &self.nodes[mat.0].value;
        let b = &self.nodes[bias.0].value;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = m[i * cols + j] + b[i];
            }
        }
        self.push(Op::AddRowBias { mat, bias, rows, cols }, out, dims)
    }

    /// Select entries of a flat node by index (with repetition allowed).
    pub fn gather(&mut self, src: Var, idx: &[usize]) -> Var {
        let v = &self.nodes[src.0].value;
        let out: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let n = out.len();
        self.push(Op::Gather { src, idx: idx.to_vec() }, out, vec![n])
    }

    /// Select columns of a matrix: `out[:, t] = src[:, idx[t]]`.
    pub fn gather_cols(&mut self, src: Var, idx: &[usize]) -> Var {
        let dims = self.nodes[src.0].dims.clone();
        assert_eq!(dims.len(), 2, "gather_cols expects a matrix");
        let (rows, cols) = (dims[0], dims[1]);
        let v = &self.nodes[src.0].value;
        let k = idx.len();
        let mut out = vec![0.0; rows * k];
        for r in 0..rows {
            for (t, &j) in idx.iter().enumerate() {
                out[r * k + t] = v[r * cols + j];
            }
        }
        self.push(Op::GatherCols { src, rows, cols, idx: idx.to_vec() }, out, vec![rows, k])
    }

    /// Concatenate flat nodes end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = out.len();
        self.push(Op::Concat { parts: parts.to_vec() }, out, vec![n])
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hstack of nothing");
        let rows = self.nodes[parts[0].0].dims[0];
        let col_counts: Vec<usize> = parts
            .iter()
            .map(|p| {
                let d = &self.nodes[p.0].dims;
                assert_eq!(d.len(), 2, "hstack expects matrices");
                assert_eq!(d[0], rows, "hstack row mismatch");
                d[1]
            })
            .collect();
        let total: usize = col_counts.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (p, &c) in parts.iter().zip(&col_counts) {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(&v[r * c..(r + 1) * c]);
            }
            off += c;
        }
        self.push(Op::HStack { parts: parts.to_vec(), rows, col_counts }, out, vec![rows, total])
    }

    /// Contiguous slice of a node's flat storage.
    pub fn slice(&mut self, src: Var, offset: usize, len: usize) -> Var {
        let v = &self.nodes[src.0].value;
        assert!(offset + len <= v.len(), "slice out of bounds");
        let out = v[offset..offset + len].to_vec();
        self.push(Op::Slice { src, offset, len }, out, vec![len])
    }

    /// Reinterpret a node's flat storage under new dimensions.
    pub fn reshape(&mut self, src: Var, dims: &[usize]) -> Var {
        let v = self.nodes[src.0].value.clone();
        assert_eq!(dims.iter().product::<usize>(), v.len(), "reshape element count");
        self.push(Op::Reshape(src), v, dims.to_vec())
    }

    // ── Compositions ─────────────────────────────────────────────────

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.mul(a, b);
        self.sum(prod)
    }

    /// Scale a vector to unit norm. The norm is clamped away from zero, so
    /// near-zero inputs degrade instead of dividing by zero; callers that
    /// need exact unit output must reject zero vectors beforehand.
    pub fn l2_normalize(&mut self, v: Var) -> Var {
        let sq = self.mul(v, v);
        let total = self.sum(sq);
        let norm = self.sqrt(total);
        let safe = self.clamp_min(norm, 1e-30);
        self.bcast_div(v, safe)
    }

    /// Mean binary cross-entropy of probabilities against fixed 0/1 targets,
    /// with probabilities clipped at `1e-12` before the logarithm.
    pub fn bce_mean(&mut self, probs: Var, targets: &[f64]) -> Var {
        assert_eq!(self.numel(probs), targets.len(), "bce target length mismatch");
        let eps = 1e-12;
        let t = self.constant(targets);
        let flipped: Vec<f64> = targets.iter().map(|y| 1.0 - y).collect();
        let t_neg = self.constant(&flipped);
        let p_clip = self.clamp_min(probs, eps);
        let ln_p = self.ln(p_clip);
        let neg = self.mul_scalar(probs, -1.0);
        let one_minus = self.add_scalar(neg, 1.0);
        let q_clip = self.clamp_min(one_minus, eps);
        let ln_q = self.ln(q_clip);
        let pos_term = self.mul(t, ln_p);
        let neg_term = self.mul(t_neg, ln_q);
        let combined = self.add(pos_term, neg_term);
        let avg = self.mean(combined);
        self.mul_scalar(avg, -1.0)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar node. Returns per-node gradients;
    /// leaves created with `requires_grad = false` and plain constants
    /// receive no entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(FbrError::Contract(format!(
                "backward requires a scalar loss, got {} elements",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g_out) = grads[id].take() else { continue };
            self.backprop_node(id, &g_out, &mut grads);
            // Leaves keep their accumulated gradient; interior nodes drop it.
            if matches!(self.nodes[id].op, Op::Leaf { requires_grad: true }) {
                grads[id] = Some(g_out);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn backprop_node(&self, id: usize, g_out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                let n = self.numel(*a);
                Self::accumulate(grads, *a, n, |g| add_into(g, g_out));
                Self::accumulate(grads, *b, n, |g| add_into(g, g_out));
            }
            Op::Sub(a, b) => {
                let n = self.numel(*a);
                Self::accumulate(grads, *a, n, |g| add_into(g, g_out));
                Self::accumulate(grads, *b, n, |g| {
                    for (gi, go) in g.iter_mut().zip(g_out) {
                        *gi -= go;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = va.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] * vb[i];
                    }
                });
                Self::accumulate(grads, *b, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = va.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] / vb[i];
                    }
                });
                Self::accumulate(grads, *b, n, |g| {
                    for i in 0..n {
                        g[i] -= g_out[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::AddScalar(a) => {
                let n = self.numel(*a);
                Self::accumulate(grads, *a, n, |g| add_into(g, g_out));
            }
            Op::MulScalar(a, c) => {
                let n = self.numel(*a);
                let c = *c;
                Self::accumulate(grads, *a, n, |g| {
                    for (gi, go) in g.iter_mut().zip(g_out) {
                        *gi += go * c;
                    }
                });
            }
            Op::BcastAdd(v, s) => {
                let n = self.numel(*v);
                Self::accumulate(grads, *v, n, |g| add_into(g, g_out));
                Self::accumulate(grads, *s, 1, |g| g[0] += g_out.iter().sum::<f64>());
            }
            Op::BcastSub(v, s) => {
                let n = self.numel(*v);
                Self::accumulate(grads, *v, n, |g| add_into(g, g_out));
                Self::accumulate(grads, *s, 1, |g| g[0] -= g_out.iter().sum::<f64>());
            }
            Op::BcastMul(v, s) => {
                let sv = self.nodes[s.0].value[0];
                let vv = &self.nodes[v.0].value;
                let n = vv.len();
                Self::accumulate(grads, *v, n, |g| {
                    for (gi, go) in g.iter_mut().zip(g_out) {
                        *gi += go * sv;
                    }
                });
                Self::accumulate(grads, *s, 1, |g| {
                    g[0] += g_out.iter().zip(vv).map(|(go, x)| go * x).sum::<f64>();
                });
            }
            Op::BcastDiv(v, s) => {
                let sv = self.nodes[s.0].value[0];
                let vv = &self.nodes[v.0].value;
                let n = vv.len();
                Self::accumulate(grads, *v, n, |g| {
                    for (gi, go) in g.iter_mut().zip(g_out) {
                        *gi += go / sv;
                    }
                });
                Self::accumulate(grads, *s, 1, |g| {
                    g[0] -= g_out.iter().zip(vv).map(|(go, x)| go * x).sum::<f64>() / (sv * sv);
                });
            }
            Op::Relu(a) => {
                let va = &self.nodes[a.0].value;
                let n = va.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        if va[i] > 0.0 {
                            g[i] += g_out[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let n = y.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                let n = y.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] * y[i];
                    }
                });
            }
            Op::Ln(a) => {
                let va = &self.nodes[a.0].value;
                let n = va.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] / va[i];
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                let n = y.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[i] * 0.5 / y[i];
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let va = &self.nodes[a.0].value;
                let n = va.len();
                let floor = *floor;
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        if va[i] > floor {
                            g[i] += g_out[i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.numel(*a);
                Self::accumulate(grads, *a, n, |g| {
                    for gi in g.iter_mut() {
                        *gi += g_out[0];
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.numel(*a);
                let scale = g_out[0] / n as f64;
                Self::accumulate(grads, *a, n, |g| {
                    for gi in g.iter_mut() {
                        *gi += scale;
                    }
                });
            }
            Op::MaxAll(a) => {
                let va = &self.nodes[a.0].value;
                let n = va.len();
                let arg = va
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                    .0;
                Self::accumulate(grads, *a, n, |g| g[arg] += g_out[0]);
            }
            Op::LogSumExp(a) => {
                let va = &self.nodes[a.0].value;
                let out = node.value[0];
                let n = va.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += g_out[0] * (va[i] - out).exp();
                    }
                });
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                Self::accumulate(grads, *a, m * k, |g| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g_out[i * n + j] * vb[p * n + j];
                            }
                            g[i * k + p] += acc;
                        }
                    }
                });
                Self::accumulate(grads, *b, k * n, |g| {
                    for i in 0..m {
                        for p in 0..k {
                            let av = va[i * k + p];
                            if av != 0.0 {
                                for j in 0..n {
                                    g[p * n + j] += av * g_out[i * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2d { input, weight, bias, stride } => {
                let idims = &self.nodes[input.0].dims;
                let wdims = &self.nodes[weight.0].dims;
                let (ic, ih, iw) = (idims[0], idims[1], idims[2]);
                let oc = wdims[0];
                let s = *stride;
                let (oh, ow) = (node.dims[1], node.dims[2]);
                let x = &self.nodes[input.0].value;
                let w = &self.nodes[weight.0].value;

                let mut d_in = vec![0.0; ic * ih * iw];
                let mut d_w = vec![0.0; oc * ic * 9];
                let mut d_b = vec![0.0; oc];
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = g_out[(o * oh + oy) * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            d_b[o] += go;
                            for c in 0..ic {
                                for ky in 0..3 {
                                    let iy = (oy * s + ky) as isize - 1;
                                    if iy < 0 || iy >= ih as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = (ox * s + kx) as isize - 1;
                                        if ix < 0 || ix >= iw as isize {
                                            continue;
                                        }
                                        let wi = ((o * ic + c) * 3 + ky) * 3 + kx;
                                        let xi = (c * ih + iy as usize) * iw + ix as usize;
                                        d_in[xi] += go * w[wi];
                                        d_w[wi] += go * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *input, d_in.len(), |g| add_into(g, &d_in));
                Self::accumulate(grads, *weight, d_w.len(), |g| add_into(g, &d_w));
                Self::accumulate(grads, *bias, d_b.len(), |g| add_into(g, &d_b));
            }
            Op::AddRowBias { mat, bias, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                Self::accumulate(grads, *mat, rows * cols, |g| add_into(g, g_out));
                Self::accumulate(grads, *bias, rows, |g| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[i] += g_out[i * cols + j];
                        }
                    }
                });
            }
            Op::Gather { src, idx } => {
                let n = self.numel(*src);
                Self::accumulate(grads, *src, n, |g| {
                    for (t, &i) in idx.iter().enumerate() {
                        g[i] += g_out[t];
                    }
                });
            }
            Op::GatherCols { src, rows, cols, idx } => {
                let (rows, cols) = (*rows, *cols);
                let k = idx.len();
                Self::accumulate(grads, *src, rows * cols, |g| {
                    for r in 0..rows {
                        for (t, &j) in idx.iter().enumerate() {
                            g[r * cols + j] += g_out[r * k + t];
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for p in parts {
                    let n = self.numel(*p);
                    let seg = &g_out[off..off + n];
                    Self::accumulate(grads, *p, n, |g| add_into(g, seg));
                    off += n;
                }
            }
            Op::HStack { parts, rows, col_counts } => {
                let rows = *rows;
                let total: usize = col_counts.iter().sum();
                let mut off = 0;
                for (p, &c) in parts.iter().zip(col_counts) {
                    Self::accumulate(grads, *p, rows * c, |g| {
                        for r in 0..rows {
                            for j in 0..c {
                                g[r * c + j] += g_out[r * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::Slice { src, offset, len } => {
                let n = self.numel(*src);
                let (offset, len) = (*offset, *len);
                Self::accumulate(grads, *src, n, |g| {
                    for t in 0..len {
                        g[offset + t] += g_out[t];
                    }
                });
            }
            Op::Reshape(src) => {
                let n = self.numel(*src);
                Self::accumulate(grads, *src, n, |g| add_into(g, g_out));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
