//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every training step. Each operation appends a
//! node holding its forward value and the handles of its inputs; node
//! indices are therefore already a topological order and [`Graph::backward`]
//! walks them in reverse. Nodes that do not depend on any grad-requiring
//! leaf are skipped entirely during the backward pass, which is how frozen
//! sub-networks avoid paying for gradients.

use super::kernels::{self, gelu, gelu_grad, gemm, gemm_nt, gemm_tn, sigmoid, softmax_rows};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Mean(Var),
    Sum(Var),
    SumSq(Var),
    SumRows(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    RelBias {
        bias: Var,
        max_distance: usize,
    },
    Bce {
        p: Var,
        target: Vec<T>,
        weight: Vec<T>,
        clamped: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    clamp_warnings: usize,
}

/// Gradients of a scalar with respect to every grad-requiring leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            clamp_warnings: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities clamped by [`Graph::bce`] so far.
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var> {
        check_finite("leaf", tensor.data())?;
        let needs_grad = tensor.requires_grad();
        Ok(self.push_raw(tensor, Op::Leaf, needs_grad))
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.leaf(tensor.with_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.leaf(tensor.with_grad(false))
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(op_name, &data)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(dim_err(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", vec![m, n], data, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "transpose")?;
        let data = kernels::transpose(self.value(a).data(), r, c);
        self.push("transpose", vec![c, r], data, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op_name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `x[r,c] + bias[c]`, the only broadcast the tape supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.shape(bias) != [c] {
            return Err(dim_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add_bias", shape, data, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, data, Op::Scale(x, s), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        check_finite("softmax", self.value(x).data())?;
        let c = self.value(x).cols();
        let data = softmax_rows(self.value(x).data(), c);
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, data, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the trailing axis followed by the affine
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.value(x).cols();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(dim_err("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        check_finite("layer_norm", self.value(x).data())?;
        let eps = T::lit(LAYER_NORM_EPS);
        let n = T::lit(c as f64);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = self.value(x).len() / c;
        let mut xhat = Vec::with_capacity(rows * c);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * c);
        for row in self.value(x).data().chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            shape,
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

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, data, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        check_finite("sigmoid", self.value(x).data())?;
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", shape, data, Op::Sigmoid(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.data().iter().copied().sum::<T>() / T::lit(v.len() as f64);
        self.push("mean", vec![1], vec![m], Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| v * v).sum::<T>();
        self.push("sum_sq", vec![1], vec![s], Op::SumSq(x), &[x])
    }

    /// Column sums of `x[r,c]`, shape `[c]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let c = self.value(x).cols();
        let mut out = vec![T::zero(); c];
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.push("sum_rows", vec![c], out, Op::SumRows(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_cols", &[r, c], &[start, len]));
        }
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push(
            "slice_cols",
            vec![r, len],
            data,
            Op::SliceCols { x, start },
            &[x],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (r, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols")?;
            if pr != r {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            vec![r, total],
            data,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// im2col over the time axis: row `t` of the output holds input rows
    /// `t*stride - pad .. t*stride - pad + kernel` concatenated, zeros
    /// outside the input.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, c) = self.matrix(x, "unfold")?;
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(dim_err("unfold", &[t, c], &[kernel, stride, pad]));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); t_out * kernel * c];
        for o in 0..t_out {
            for k in 0..kernel {
                let pos = (o * stride + k) as isize - pad as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let pos = pos as usize;
                let dst = (o * kernel + k) * c;
                data[dst..dst + c].copy_from_slice(&src[pos * c..(pos + 1) * c]);
            }
        }
        self.push(
            "unfold",
            vec![t_out, kernel * c],
            data,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        )
    }

    /// Expands a learned bias table `[2R+1]` into the `[len,len]` matrix
    /// `out[i][j] = bias[clip(i - j, -R, R) + R]`.
    pub fn rel_bias(&mut self, bias: Var, len: usize) -> Result<Var> {
        let n = self.value(bias).len();
        if self.shape(bias).len() != 1 || n.is_multiple_of(2) || len == 0 {
            return Err(dim_err("rel_bias", self.shape(bias), &[len]));
        }
        let max_distance = n / 2;
        let b = self.value(bias).data();
        let mut data = Vec::with_capacity(len * len);
        for i in 0..len {
            for j in 0..len {
                data.push(b[rel_index(i, j, max_distance)]);
            }
        }
        self.push(
            "rel_bias",
            vec![len, len],
            data,
            Op::RelBias { bias, max_distance },
            &[bias],
        )
    }

    /// Weighted mean binary cross-entropy `Σ w·bce(p, t) / Σ w`.
    ///
    /// Probabilities outside `[1e-7, 1-1e-7]` are clamped (and contribute
    /// no gradient); each clamp increments [`Graph::clamp_warnings`].
    pub fn bce(&mut self, p: Var, target: &[T], weight: &[T]) -> Result<Var> {
        let n = self.value(p).len();
        if target.len() != n || weight.len() != n {
            return Err(dim_err("bce", self.shape(p), &[target.len(), weight.len()]));
        }
        let lo = T::lit(PROB_CLAMP);
        let hi = T::one() - lo;
        let wsum: T = weight.iter().copied().sum();
        if wsum <= T::zero() {
            return Err(Error::Contract("bce with zero total weight".into()));
        }
        let mut clamped = Vec::with_capacity(n);
        let mut total = T::zero();
        for ((&pv, &t), &w) in self.value(p).data().iter().zip(target).zip(weight) {
            let c = pv < lo || pv > hi;
            clamped.push(c);
            let q = pv.max(lo).min(hi);
            total += w * -(t * q.ln() + (T::one() - t) * (T::one() - q).ln());
        }
        self.clamp_warnings += clamped.iter().filter(|&&c| c).count();
        self.push(
            "bce",
            vec![1],
            vec![total / wsum],
            Op::Bce {
                p,
                target: target.to_vec(),
                weight: weight.iter().map(|&w| w / wsum).collect(),
                clamped,
            },
            &[p],
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], to: Var, g: Vec<T>) {
        if self.nodes[to.0].needs_grad {
            accumulate(&mut grads[to.0], g);
        }
    }

    fn propagate(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if want(*a) {
                    let da = gemm_nt(dy, self.value(*b).data(), m, n, k);
                    self.send(grads, *a, da);
                }
                if want(*b) {
                    let db = gemm_tn(self.value(*a).data(), dy, m, k, n);
                    self.send(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                self.send(grads, *a, kernels::transpose(dy, c, r));
            }
            Op::Add(a, b) => {
                self.send(grads, *a, dy.to_vec());
                self.send(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, dy.to_vec());
                if want(*b) {
                    self.send(grads, *b, dy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let g = dy
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.send(grads, *a, g);
                }
                if want(*b) {
                    let g = dy
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.send(grads, *b, g);
                }
            }
            Op::AddBias(x, bias) => {
                self.send(grads, *x, dy.to_vec());
                if want(*bias) {
                    let c = self.value(*bias).len();
                    let mut db = vec![T::zero(); c];
                    for row in dy.chunks(c) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.send(grads, *bias, db);
                }
            }
            Op::Scale(x, s) => {
                self.send(grads, *x, dy.iter().map(|&g| g * *s).collect());
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.send(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let g = self.value(*gamma).data();
                if want(*x) {
                    let n = T::lit(c as f64);
                    let mut dx = vec![T::zero(); dy.len()];
                    for (r, ((gr, hr), dr)) in dy
                        .chunks(c)
                        .zip(xhat.chunks(c))
                        .zip(dx.chunks_mut(c))
                        .enumerate()
                    {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * g[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let scale = inv_std[r] / n;
                        for j in 0..c {
                            let dh = gr[j] * g[j];
                            dr[j] = scale * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    self.send(grads, *x, dx);
                }
                if want(*gamma) || want(*beta) {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for (gr, hr) in dy.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                        }
                    }
                    self.send(grads, *gamma, dg);
                    self.send(grads, *beta, db);
                }
            }
            Op::Gelu(x) => {
                let g = dy
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g * gelu_grad(v))
                    .collect();
                self.send(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = dy
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                self.send(grads, *x, g);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let g = dy[0] / T::lit(n as f64);
                self.send(grads, *x, vec![g; n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.send(grads, *x, vec![dy[0]; n]);
            }
            Op::SumSq(x) => {
                let two = T::lit(2.0);
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .map(|&v| two * v * dy[0])
                    .collect();
                self.send(grads, *x, g);
            }
            Op::SumRows(x) => {
                let r = self.value(*x).rows();
                let g = (0..r).flat_map(|_| dy.iter().copied()).collect();
                self.send(grads, *x, g);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let w = node.value.cols();
                let mut g = vec![T::zero(); r * c];
                for i in 0..r {
                    g[i * c + start..i * c + start + w].copy_from_slice(&dy[i * w..(i + 1) * w]);
                }
                self.send(grads, *x, g);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if want(p) {
                        let mut g = Vec::with_capacity(r * w);
                        for i in 0..r {
                            g.extend_from_slice(&dy[i * total + offset..i * total + offset + w]);
                        }
                        self.send(grads, p, g);
                    }
                    offset += w;
                }
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (t, c) = (self.value(*x).rows(), self.value(*x).cols());
                let t_out = node.value.rows();
                let mut g = vec![T::zero(); t * c];
                for o in 0..t_out {
                    for k in 0..*kernel {
                        let pos = (o * stride + k) as isize - *pad as isize;
                        if pos < 0 || pos as usize >= t {
                            continue;
                        }
                        let pos = pos as usize;
                        let src = (o * kernel + k) * c;
                        for j in 0..c {
                            g[pos * c + j] += dy[src + j];
                        }
                    }
                }
                self.send(grads, *x, g);
            }
            Op::RelBias { bias, max_distance } => {
                let len = node.value.rows();
                let mut g = vec![T::zero(); 2 * max_distance + 1];
                for i in 0..len {
                    for j in 0..len {
                        g[rel_index(i, j, *max_distance)] += dy[i * len + j];
                    }
                }
                self.send(grads, *bias, g);
            }
            Op::Bce {
                p,
                target,
                weight,
                clamped,
            } => {
                let g = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(target)
                    .zip(weight)
                    .zip(clamped)
                    .map(|(((&pv, &t), &w), &c)| {
                        if c {
                            T::zero()
                        } else {
                            dy[0] * w * ((T::one() - t) / (T::one() - pv) - t / pv)
                        }
                    })
                    .collect();
                self.send(grads, *p, g);
            }
        }
    }
}

/// Index into a `[2R+1]` relative-bias table for query `i`, key `j`.
pub fn rel_index(i: usize, j: usize, max_distance: usize) -> usize {
    let r = max_distance as isize;
    let d = (i as isize - j as isize).clamp(-r, r);
    (d + r) as usize
}
