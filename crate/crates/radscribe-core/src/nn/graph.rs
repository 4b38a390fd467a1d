//! Define-by-run reverse-mode autodiff over [`Matrix`] values.
//!
//! Each op computes its value eagerly and records what backward needs.
//! Gradients only flow into nodes that require them, so constants (frozen
//! encoder features, token id gathers into untracked tables) never get a
//! gradient buffer at all.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::Matrix;
use super::{gelu, gelu_grad};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    MatmulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: Vec<(f64, f64)>, // (mean, rstd) per row
    },
    RowSoftmax {
        x: NodeId,
        causal: bool,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    CrossEntropyMean {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass with its tape. Parameters are registered with an
/// opaque tag; after `backward` the per-tag gradients can be collected.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, NodeId)>, // (tag, node)
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.shape(), (1, 1));
        self.nodes[id.0].value.get(0, 0)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is retrievable by `tag` after backward.
    pub fn param(&mut self, tag: usize, value: Matrix) -> NodeId {
        let id = self.push(value, Op::Leaf, true);
        self.params.push((tag, id));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), rg)
    }

    /// `a @ b.T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul_nt(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatmulNt(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).add(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 x d` bias row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(bv.cols(), xv.cols(), "bias width mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddRow(x, bias), rg)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.value(x).scale(k);
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = gelu(*v);
        }
        let rg = self.needs(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let d = xv.cols();
        assert_eq!(gv.shape(), (1, d), "gamma shape");
        assert_eq!(bv.shape(), (1, d), "beta shape");
        let mut value = Matrix::zeros(xv.rows(), d);
        let mut stats = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / libm::sqrt(var + LN_EPS);
            stats.push((mean, rstd));
            for (c, out) in value.row_mut(r).iter_mut().enumerate() {
                *out = gv.get(0, c) * (row[c] - mean) * rstd + bv.get(0, c);
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        )
    }

    /// Row-wise softmax. With `causal`, row `i` attends to columns `0..=i`
    /// (the matrix must be square) and later columns are exactly zero.
    pub fn row_softmax(&mut self, x: NodeId, causal: bool) -> NodeId {
        let xv = self.value(x);
        if causal {
            assert_eq!(xv.rows(), xv.cols(), "causal softmax needs square scores");
        }
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let end = if causal { r + 1 } else { xv.cols() };
            let row = &xv.row(r)[..end];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let mut denom = 0.0;
            let out = value.row_mut(r);
            for c in 0..end {
                let e = libm::exp(row[c] - max);
                out[c] = e;
                denom += e;
            }
            for o in &mut out[..end] {
                *o /= denom;
            }
        }
        let rg = self.needs(x);
        self.push(value, Op::RowSoftmax { x, causal }, rg)
    }

    /// Selects rows of `table` by index, duplicates allowed.
    pub fn gather_rows(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let tv = self.value(table);
        let mut value = Matrix::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(tv.row(id));
        }
        let rg = self.needs(table);
        self.push(value, Op::GatherRows { table, ids }, rg)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(x).slice_rows(start, len);
        let rg = self.needs(x);
        self.push(value, Op::SliceRows { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut value = self.value(parts[0]).clone();
        for p in &parts[1..] {
            value = value.vcat(self.value(*p));
        }
        let rg = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(x).slice_cols(start, len);
        let rg = self.needs(x);
        self.push(value, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, total);
        let mut at = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[at..at + pv.cols()].copy_from_slice(pv.row(r));
            }
            at += pv.cols();
        }
        let rg = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Mean next-token cross-entropy over masked rows. `targets[r]` is the
    /// class for row `r`; rows with `mask[r] == false` contribute nothing.
    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
    ) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows(), "targets length");
        assert_eq!(mask.len(), lv.rows(), "mask length");
        let m = mask.iter().filter(|&&b| b).count();
        assert!(m > 0, "cross entropy needs a non-empty mask");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for r in 0..lv.rows() {
            if !mask[r] {
                continue;
            }
            let row = lv.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
            let mut denom = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = libm::exp(v - max);
                probs.set(r, c, e);
                denom += e;
            }
            for c in 0..lv.cols() {
                let p = probs.get(r, c) / denom;
                probs.set(r, c, p);
            }
            loss -= libm::log(probs.get(r, targets[r]).max(f64::MIN_POSITIVE));
        }
        loss /= m as f64;
        let rg = self.needs(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropyMean {
                logits,
                targets,
                mask,
                probs,
            },
            rg,
        )
    }

    /// Runs reverse-mode accumulation from `loss` (a 1x1 node) and returns
    /// gradients for every registered parameter, keyed by tag.
    pub fn backward(&self, loss: NodeId) -> BTreeMap<usize, Matrix> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            // Re-stash for params; everything else only needed transiently.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(gout);
                continue;
            }
            self.backprop_op(id, &gout, &mut grads);
        }

        let mut out = BTreeMap::new();
        for (tag, node) in &self.params {
            let g = grads[node.0]
                .take()
                .unwrap_or_else(|| Matrix::zeros(self.value(*node).rows(), self.value(*node).cols()));
            out.insert(*tag, g);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: NodeId, delta: Matrix) {
        if !self.needs(target) {
            return; // structurally absent gradient
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_op(&self, id: usize, gout: &Matrix, grads: &mut [Option<Matrix>]) {
        match &self.nodes[id].op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let da = gout.matmul_nt(self.value(*b));
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = self.value(*a).matmul_tn(gout);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatmulNt(a, b) => {
                if self.needs(*a) {
                    let da = gout.matmul(self.value(*b));
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = gout.matmul_tn(self.value(*a));
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, gout.clone());
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, gout.sum_rows());
                }
            }
            Op::Scale(x, k) => {
                self.accumulate(grads, *x, gout.scale(*k));
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut dx = gout.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *d *= gelu_grad(v);
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let d = xv.cols() as f64;
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dgamma = Matrix::zeros(1, xv.cols());
                    let mut dbeta = Matrix::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        let (mean, rstd) = stats[r];
                        for c in 0..xv.cols() {
                            let xh = (xv.get(r, c) - mean) * rstd;
                            let g = gout.get(r, c);
                            dgamma.data_mut()[c] += g * xh;
                            dbeta.data_mut()[c] += g;
                        }
                    }
                    self.accumulate(grads, *gamma, dgamma);
                    self.accumulate(grads, *beta, dbeta);
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let (mean, rstd) = stats[r];
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xh = 0.0;
                        for c in 0..xv.cols() {
                            let dy = gout.get(r, c) * gv.get(0, c);
                            let xh = (xv.get(r, c) - mean) * rstd;
                            sum_dy += dy;
                            sum_dy_xh += dy * xh;
                        }
                        for c in 0..xv.cols() {
                            let dy = gout.get(r, c) * gv.get(0, c);
                            let xh = (xv.get(r, c) - mean) * rstd;
                            dx.set(r, c, rstd * (dy - sum_dy / d - xh * sum_dy_xh / d));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::RowSoftmax { x, causal } => {
                if self.needs(*x) {
                    let pv = &self.nodes[id].value;
                    let mut dx = Matrix::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let end = if *causal { r + 1 } else { pv.cols() };
                        let mut dot = 0.0;
                        for c in 0..end {
                            dot += gout.get(r, c) * pv.get(r, c);
                        }
                        for c in 0..end {
                            dx.set(r, c, pv.get(r, c) * (gout.get(r, c) - dot));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::GatherRows { table, ids } => {
                if self.needs(*table) {
                    let tv = self.value(*table);
                    let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                    for (r, &row_id) in ids.iter().enumerate() {
                        for (o, g) in dt.row_mut(row_id).iter_mut().zip(gout.row(r)) {
                            *o += g;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::SliceRows { x, start } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..gout.rows() {
                        dx.row_mut(start + r).copy_from_slice(gout.row(r));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.needs(*p) {
                        self.accumulate(grads, *p, gout.slice_rows(at, rows));
                    }
                    at += rows;
                }
            }
            Op::SliceCols { x, start } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..gout.rows() {
                        dx.row_mut(r)[*start..*start + gout.cols()].copy_from_slice(gout.row(r));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.needs(*p) {
                        self.accumulate(grads, *p, gout.slice_cols(at, cols));
                    }
                    at += cols;
                }
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                mask,
                probs,
            } => {
                if self.needs(*logits) {
                    let scale = gout.get(0, 0) / mask.iter().filter(|&&b| b).count() as f64;
                    let mut dl = Matrix::zeros(probs.rows(), probs.cols());
                    for r in 0..probs.rows() {
                        if !mask[r] {
                            continue;
                        }
                        for c in 0..probs.cols() {
                            let indicator = if c == targets[r] { 1.0 } else { 0.0 };
                            dl.set(r, c, scale * (probs.get(r, c) - indicator));
                        }
                    }
                    self.accumulate(grads, *logits, dl);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Central finite difference of `f` with respect to entry `(r, c)` of
    /// the parameter matrix fed through `build`.
    fn finite_diff(
        base: &Matrix,
        r: usize,
        c: usize,
        h: f64,
        f: &mut dyn FnMut(&Matrix) -> f64,
    ) -> f64 {
        let mut plus = base.clone();
        plus.set(r, c, base.get(r, c) + h);
        let mut minus = base.clone();
        minus.set(r, c, base.get(r, c) - h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal_scaled(0.5))
    }

    fn check_param_grad(
        base: &Matrix,
        analytic: &Matrix,
        f: &mut dyn FnMut(&Matrix) -> f64,
    ) {
        for r in 0..base.rows() {
            for c in 0..base.cols() {
                let num = finite_diff(base, r, c, 1e-6, f);
                let ana = analytic.get(r, c);
                let denom = ana.abs().max(num.abs()).max(1e-8);
                assert!(
                    (ana - num).abs() / denom < 1e-5,
                    "grad mismatch at ({r},{c}): analytic {ana}, numeric {num}"
                );
            }
        }
    }

    #[test]
    fn gradcheck_linear_gelu_layernorm_chain() {
        let mut rng = Rng::from_seed(42);
        let x = rand_matrix(&mut rng, 3, 4);
        let w = rand_matrix(&mut rng, 4, 5);
        let b = rand_matrix(&mut rng, 1, 5);
        let gamma = rand_matrix(&mut rng, 1, 5);
        let beta = rand_matrix(&mut rng, 1, 5);
        let targets = vec![1, 3, 0];
        let mask = vec![true, false, true];

        let mut run = |w_: &Matrix, b_: &Matrix, gm: &Matrix, bt: &Matrix| -> (f64, BTreeMap<usize, Matrix>) {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let wn = g.param(0, w_.clone());
            let bn = g.param(1, b_.clone());
            let gn = g.param(2, gm.clone());
            let tn = g.param(3, bt.clone());
            let h = g.matmul(xn, wn);
            let h = g.add_row(h, bn);
            let h = g.gelu(h);
            let h = g.layer_norm(h, gn, tn);
            let loss = g.cross_entropy_mean(h, targets.clone(), mask.clone());
            let v = g.scalar(loss);
            (v, g.backward(loss))
        };

        let (_, grads) = run(&w, &b, &gamma, &beta);
        check_param_grad(&w, &grads[&0], &mut |m| run(m, &b, &gamma, &beta).0);
        check_param_grad(&b, &grads[&1], &mut |m| run(&w, m, &gamma, &beta).0);
        check_param_grad(&gamma, &grads[&2], &mut |m| run(&w, &b, m, &beta).0);
        check_param_grad(&beta, &grads[&3], &mut |m| run(&w, &b, &gamma, m).0);
    }

    #[test]
    fn gradcheck_attention_shape_ops() {
        let mut rng = Rng::from_seed(7);
        let x = rand_matrix(&mut rng, 4, 6);
        let wq = rand_matrix(&mut rng, 6, 6);
        let table = rand_matrix(&mut rng, 5, 6);
        let ids = vec![0usize, 3, 3, 1];
        let targets = vec![0usize, 1, 2, 3];
        let mask = vec![true; 4];

        let mut run = |wq_: &Matrix, tb: &Matrix| -> (f64, BTreeMap<usize, Matrix>) {
            let mut g = Graph::new();
            let tn = g.param(10, tb.clone());
            let gathered = g.gather_rows(tn, ids.clone());
            let xn = g.constant(x.clone());
            let sum = g.add(gathered, xn);
            let wn = g.param(11, wq_.clone());
            let q = g.matmul(sum, wn);
            let qh = g.slice_cols(q, 0, 3);
            let kh = g.slice_cols(q, 3, 3);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, 1.0 / libm::sqrt(3.0));
            let probs = g.row_softmax(scores, true);
            let ctx = g.matmul(probs, kh);
            let both = g.concat_cols(&[ctx, qh]);
            let loss = g.cross_entropy_mean(both, targets.clone(), mask.clone());
            (g.scalar(loss), g.backward(loss))
        };

        let (_, grads) = run(&wq, &table);
        check_param_grad(&wq, &grads[&11], &mut |m| run(m, &table).0);
        check_param_grad(&table, &grads[&10], &mut |m| run(&wq, m).0);
    }

    #[test]
    fn constants_get_no_gradient_structurally() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let w = g.param(0, Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let y = g.matmul(x, w);
        let loss = g.cross_entropy_mean(y, vec![0], vec![true]);
        let grads = g.backward(loss);
        assert_eq!(grads.len(), 1);
        assert!(grads.contains_key(&0));
    }

    #[test]
    fn causal_softmax_zeroes_future_positions() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(2, 2, vec![0.3, 9.9, 0.1, 0.2]));
        let p = g.row_softmax(x, true);
        let v = g.value(p);
        assert_eq!(v.get(0, 0), 1.0);
        assert_eq!(v.get(0, 1), 0.0, "future position must be exactly zero");
        assert!((v.get(1, 0) + v.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let w = g.param(0, Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let _unused = g.param(1, Matrix::zeros(3, 3));
        let y = g.matmul(x, w);
        let loss = g.cross_entropy_mean(y, vec![0], vec![true]);
        let grads = g.backward(loss);
        assert_eq!(grads[&1].shape(), (3, 3));
        assert!(grads[&1].data().iter().all(|&v| v == 0.0));
    }
}
