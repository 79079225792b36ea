//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients for every node that (transitively) depends on a
//! leaf created with `needs_grad = true`.

use crate::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Graph::custom`]: `(grad_out, inputs, output) -> grad per input`.
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Unfold(Var, usize),
    PadRows(Var),
    Custom(Vec<Var>, CustomBackward),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm(av, false, bv, true, &mut out, 0.0);
        self.push(out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Adds a `(1, n)` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(rv.cols(), self.value(x).cols(), "add_row width mismatch");
        let rv = rv.data().to_vec();
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row), &[x, row])
    }

    /// Elementwise product with a constant tensor (masks, dropout).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), c.shape(), "mul_const shape mismatch");
        let data = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data);
        self.push(out, Op::MulConst(x, c), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    /// Sum of all elements, as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Row-wise layer normalisation with learned `(1, n)` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        assert_eq!(g.len(), cols, "layer_norm gain width mismatch");
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Row `i` of the output is row `idx[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let tv = self.value(table);
        let cols = tv.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_vec(idx.len(), cols, data);
        self.push(out, Op::GatherRows(table, idx), &[table])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// im2col for a "same"-padded 1-D convolution along rows:
    /// output row `t` holds input rows `t - (k-1)/2 ..= t + k/2`, zero outside.
    pub fn unfold(&mut self, x: Var, kernel: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let left = (kernel - 1) / 2;
        let mut out = Tensor::zeros(rows, kernel * cols);
        for t in 0..rows {
            for j in 0..kernel {
                let src = t as isize + j as isize - left as isize;
                if src >= 0 && (src as usize) < rows {
                    out.row_mut(t)[j * cols..(j + 1) * cols].copy_from_slice(xv.row(src as usize));
                }
            }
        }
        self.push(out, Op::Unfold(x, kernel), &[x])
    }

    /// Appends zero rows until the tensor has `total` rows.
    pub fn pad_rows(&mut self, x: Var, total: usize) -> Var {
        let xv = self.value(x);
        assert!(total >= xv.rows(), "pad_rows cannot shrink");
        let mut data = xv.data().to_vec();
        data.resize(total * xv.cols(), 0.0);
        let out = Tensor::from_vec(total, xv.cols(), data);
        self.push(out, Op::PadRows(x), &[x])
    }

    /// Records an operation whose value and backward rule are supplied by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), backward), inputs)
    }

    /// Reverse sweep from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut da, 0.0);
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, false, &mut da, 0.0);
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(g, true, av, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    acc(*x, g.clone());
                }
                if self.needs(*row) {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*row, dr);
                }
            }
            Op::MulConst(x, c) => {
                let data = g.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
                acc(*x, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                acc(*x, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(d, v)| if *v > 0.0 { *d } else if *v < 0.0 { -*d } else { 0.0 })
                    .collect();
                acc(*x, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                let data = g.data().iter().zip(xv.data()).map(|(d, v)| 2.0 * d * v).collect();
                acc(*x, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Tensor::filled(r, c, g.item()));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            db.data_mut()[c] += g.get(r, c);
                        }
                    }
                    if self.needs(*gamma) {
                        acc(*gamma, dg);
                    }
                    if self.needs(*beta) {
                        acc(*beta, db);
                    }
                }
                if self.needs(*x) {
                    let n = cols as f64;
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = g.get(r, c) * gv[c];
                            sum_d += d;
                            sum_dx += d * xhat.get(r, c);
                        }
                        for c in 0..cols {
                            let d = g.get(r, c) * gv[c];
                            let v = inv_std[r] / n * (n * d - sum_d - xhat.get(r, c) * sum_dx);
                            dx.set(r, c, v);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(*x, dx);
            }
            Op::GatherRows(table, idx) => {
                let (tr, tc) = self.value(*table).shape();
                let mut dt = Tensor::zeros(tr, tc);
                for (i, &src) in idx.iter().enumerate() {
                    for (d, v) in dt.row_mut(src).iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                acc(*table, dt);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = Tensor::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(r, c);
                        for i in 0..r {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(p, dp);
                    }
                    off += c;
                }
            }
            Op::Unfold(x, kernel) => {
                let (rows, cols) = self.value(*x).shape();
                let left = (kernel - 1) / 2;
                let mut dx = Tensor::zeros(rows, cols);
                for t in 0..rows {
                    for j in 0..*kernel {
                        let src = t as isize + j as isize - left as isize;
                        if src >= 0 && (src as usize) < rows {
                            let gr = &g.row(t)[j * cols..(j + 1) * cols];
                            for (d, v) in dx.row_mut(src as usize).iter_mut().zip(gr) {
                                *d += v;
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::PadRows(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Tensor::from_vec(r, c, g.data()[..r * c].to_vec()));
            }
            Op::Custom(inputs, backward) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = backward(g, &vals, &node.value);
                for (v, t) in inputs.iter().zip(gs) {
                    if self.needs(*v) {
                        acc(*v, t);
                    }
                }
            }
        }
    }
}
