use std::sync::Arc;

use super::array::{gemm_acc, Array, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    LeakyRelu(Var, Real),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<Real>,
        inv_std: Vec<Real>,
    },
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    BroadcastRows(Var),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation, differentiated in reverse.
///
/// Node order is a valid topological order, so `backward` is a single
/// reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Array> {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0]
            .as_ref()
            .map(|g| Array::from_parts(r, c, g.clone()))
    }

    /// Gradient of `v`, zeros if the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Array {
        let (r, c) = self.shapes[v.0];
        self.get(v).unwrap_or_else(|| Array::zeros(r, c))
    }
}

fn dims(a: &Array) -> (usize, usize) {
    (a.rows(), a.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values.
    pub fn bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.len() * std::mem::size_of::<Real>())
            .sum()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Array) -> Var {
        self.push_unchecked(value.as_matrix(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push_unchecked(value.as_matrix(), Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Array, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (dims(self.value(a)), dims(self.value(b)));
        if da != db {
            return Err(Error::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(x));
        let (k2, n) = dims(self.value(w));
        let bv = self.value(b);
        if k != k2 || bv.len() != n {
            return Err(Error::shape(
                "linear",
                format!("x {m}x{k}, w {k2}x{n}, b {:?}", bv.shape()),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm_acc(
            m,
            k,
            n,
            self.value(x).data(),
            (k, 1),
            self.value(w).data(),
            (n, 1),
            &mut out,
        );
        self.push("linear", Array::from_parts(m, n, out), Op::Linear(x, w, b), &[x, w, b])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(Real, Real) -> Real) -> Result<Var> {
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(name, Array::from_parts(r, c, data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(Real) -> Real) -> Result<Var> {
        let out = self.value(a).map(f).as_matrix();
        self.push(name, out, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, c), |x| c * x)
    }

    /// Elementwise `max(x, slope * x)` for `slope` in `[0, 1]`.
    pub fn leaky_relu(&mut self, a: Var, slope: Real) -> Result<Var> {
        if !(0.0..=1.0).contains(&slope) {
            return Err(Error::shape("leaky_relu", format!("slope {slope} outside [0, 1]")));
        }
        self.unary("leaky_relu", a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a), Real::tanh)
    }

    /// Row-wise layer normalization with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Real) -> Result<Var> {
        let (m, n) = dims(self.value(x));
        if n == 0 || self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm", format!("width {n}")));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<Real>() / n as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n as Real;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(
            "layer_norm",
            Array::from_parts(m, n, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Column-wise concatenation of arrays with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Empty("concat"));
        };
        let m = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        if parts.iter().any(|p| self.value(*p).rows() != m) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        self.push("concat", Array::from_parts(m, n, out), Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if start > end || end > n {
            return Err(Error::shape("slice_cols", format!("[{start}, {end}) of width {n}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        self.push("slice_cols", Array::from_parts(m, w, out), Op::SliceCols(a, start), &[a])
    }

    /// Row `index[k]` of `a` becomes output row `k`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let rows = self.value(a).rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                limit: rows,
            });
        }
        let out = self.value(a).select_rows(&index);
        self.push("gather_rows", out, Op::Gather(a, index), &[a])
    }

    /// Row `k` of `values` is added into output row `targets[k]`; the output
    /// has `n` rows and rows without entries stay zero.
    pub fn segment_sum(&mut self, values: Var, targets: Arc<[usize]>, n: usize) -> Result<Var> {
        let (e, d) = dims(self.value(values));
        if targets.len() != e {
            return Err(Error::shape(
                "segment_sum",
                format!("{e} rows but {} targets", targets.len()),
            ));
        }
        let src = self.value(values).data();
        let mut out = vec![0.0; n * d];
        for (k, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::Index {
                    op: "segment_sum",
                    index: t,
                    limit: n,
                });
            }
            let dst = &mut out[t * d..(t + 1) * d];
            for (o, s) in dst.iter_mut().zip(&src[k * d..(k + 1) * d]) {
                *o += s;
            }
        }
        self.push("segment_sum", Array::from_parts(n, d, out), Op::SegmentSum(values, targets), &[values])
    }

    /// Repeat a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let v = self.value(a);
        if v.rows() != 1 {
            return Err(Error::shape("broadcast_rows", format!("expected one row, got {}", v.rows())));
        }
        let d = v.cols();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(v.data());
        }
        self.push("broadcast_rows", Array::from_parts(n, d, out), Op::BroadcastRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Array::scalar(s), Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push("sum_squares", Array::scalar(s), Op::SumSquares(a), &[a])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| dims(&n.value)).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let (m, n) = dims(&node.value);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Linear(a, b, _) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = av.cols();
                if self.wants(*a) {
                    let ga = slot(grads, *a, m * k);
                    // dA += G * B^T
                    gemm_acc(m, n, k, g, (n, 1), bv.data(), (1, n), ga);
                }
                if self.wants(*b) {
                    let gb = slot(grads, *b, k * n);
                    // dB += A^T * G
                    gemm_acc(k, m, n, av.data(), (1, k), g, (n, 1), gb);
                }
                if let Op::Linear(_, _, bias) = &node.op {
                    if self.wants(*bias) {
                        let gb = slot(grads, *bias, n);
                        for r in 0..m {
                            for (o, v) in gb.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    for (o, v) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    for ((o, gv), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if self.wants(*b) {
                    for ((o, gv), x) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                for (o, gv) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += c * gv;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                for ((o, gv), xv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(x) {
                    *o += if *xv > 0.0 { *gv } else { slope * gv };
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for ((o, gv), yv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for ((o, gv), yv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gainv = self.value(*gain).data();
                if self.wants(*gain) {
                    let gg = slot(grads, *gain, n);
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = slot(grads, *bias, n);
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                }
                if self.wants(*x) {
                    let gx = slot(grads, *x, m * n);
                    let inv_n = 1.0 / n as Real;
                    for r in 0..m {
                        let (mut mean_dy, mut mean_dy_xhat) = (0.0, 0.0);
                        for c in 0..n {
                            let dy = g[r * n + c] * gainv[c];
                            mean_dy += dy;
                            mean_dy_xhat += dy * xhat[r * n + c];
                        }
                        mean_dy *= inv_n;
                        mean_dy_xhat *= inv_n;
                        for c in 0..n {
                            let dy = g[r * n + c] * gainv[c];
                            gx[r * n + c] +=
                                inv_std[r] * (dy - mean_dy - xhat[r * n + c] * mean_dy_xhat);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        let gp = slot(grads, *p, m * w);
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * n + offset..r * n + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = self.value(*a).cols();
                let ga = slot(grads, *a, m * w);
                for r in 0..m {
                    add_into(&mut ga[r * w + start..r * w + start + n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::Gather(a, index) => {
                let len = self.value(*a).len();
                let ga = slot(grads, *a, len);
                for (k, &src) in index.iter().enumerate() {
                    add_into(&mut ga[src * n..(src + 1) * n], &g[k * n..(k + 1) * n]);
                }
            }
            Op::SegmentSum(a, targets) => {
                let ga = slot(grads, *a, targets.len() * n);
                for (k, &t) in targets.iter().enumerate() {
                    add_into(&mut ga[k * n..(k + 1) * n], &g[t * n..(t + 1) * n]);
                }
            }
            Op::BroadcastRows(a) => {
                let ga = slot(grads, *a, n);
                for r in 0..m {
                    add_into(ga, &g[r * n..(r + 1) * n]);
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                for o in slot(grads, *a, len).iter_mut() {
                    *o += g[0];
                }
            }
            Op::SumSquares(a) => {
                let x = self.value(*a).data();
                for (o, xv) in slot(grads, *a, x.len()).iter_mut().zip(x) {
                    *o += 2.0 * xv * g[0];
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<Real>>], v: Var, len: usize) -> &mut Vec<Real> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [Real], src: &[Real]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}
