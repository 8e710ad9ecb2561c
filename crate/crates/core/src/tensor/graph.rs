//! Recorded computation graph and reverse-mode backward pass.
//!
//! A [`Graph`] owns one forward recording: nodes are appended in evaluation
//! order (which is therefore topological), and [`Graph::backward`] consumes
//! the graph, replaying nodes in reverse and accumulating vector-Jacobian
//! products. Tensors consumed by several nodes receive the sum of all path
//! gradients.

use super::{broadcast_shapes, broadcast_strides, strides_of, Real, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Node(usize);

enum Op<F> {
    Leaf,
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    Div(Node, Node),
    AddScalar(Node),
    MulScalar(Node, F),
    Neg(Node),
    Relu(Node),
    ClampMin(Node, F),
    Abs(Node),
    Sqrt(Node),
    Square(Node),
    Matmul(Node, Node),
    TransposeLast2(Node),
    Permute(Node, Vec<usize>),
    Reshape(Node),
    Concat(Vec<Node>, usize),
    Slice {
        input: Node,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        input: Node,
        axis: usize,
        indices: Vec<usize>,
    },
    SumAxis(Node, usize),
    MeanAxis(Node, usize),
    MeanAll(Node),
    NormLastDim(Node),
    Softmax(Node),
    LayerNorm {
        x: Node,
        gamma: Node,
        beta: Node,
        inv_std: Vec<F>,
        xhat: Vec<F>,
    },
    Dropout {
        input: Node,
        mask: Vec<bool>,
        scale: F,
    },
}

struct Entry<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients returned by [`Graph::backward`], addressed by leaf [`Node`]s.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, node: Node) -> Option<&Tensor<F>> {
        self.grads[node.0].as_ref()
    }

    pub fn take(&mut self, node: Node) -> Option<Tensor<F>> {
        self.grads[node.0].take()
    }
}

/// Single-threaded recording of one forward pass.
pub struct Graph<F: Real> {
    nodes: Vec<Entry<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: Node) -> &Tensor<F> {
        &self.nodes[node.0].value
    }

    fn shape(&self, node: Node) -> &[usize] {
        self.nodes[node.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Node {
        self.nodes.push(Entry {
            value,
            op,
            needs_grad,
        });
        Node(self.nodes.len() - 1)
    }

    fn needs(&self, node: Node) -> bool {
        self.nodes[node.0].needs_grad
    }

    /// Leaf that does not receive a gradient (observations, constants).
    pub fn input(&mut self, t: &Tensor<F>) -> Node {
        self.push(t.clone(), Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (model parameters).
    pub fn param(&mut self, t: &Tensor<F>) -> Node {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// Constant leaf built from f64 values (dataset-side geometry).
    pub fn constant_f64(&mut self, shape: Vec<usize>, values: &[f64]) -> Result<Node> {
        let t = Tensor::from_f64_slice(shape, values)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    // ── Elementwise binary ──────────────────────────────────────────────

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary("add", a, b, |x, y| x + y, |an, bn| Op::Add(an, bn))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary("sub", a, b, |x, y| x - y, |an, bn| Op::Sub(an, bn))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary("mul", a, b, |x, y| x * y, |an, bn| Op::Mul(an, bn))
    }

    pub fn div(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary("div", a, b, |x, y| x / y, |an, bn| Op::Div(an, bn))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Node,
        b: Node,
        f: impl Fn(F, F) -> F,
        op: impl Fn(Node, Node) -> Op<F>,
    ) -> Result<Node> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = broadcast_apply(name, va, vb, f)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op(a, b), needs))
    }

    // ── Elementwise unary ───────────────────────────────────────────────

    pub fn add_scalar(&mut self, x: Node, c: F) -> Node {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Node, c: F) -> Node {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: Node) -> Node {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn relu(&mut self, x: Node) -> Node {
        self.unary(x, |v| v.max(F::ZERO), Op::Relu(x))
    }

    pub fn clamp_min(&mut self, x: Node, c: F) -> Node {
        self.unary(x, |v| v.max(c), Op::ClampMin(x, c))
    }

    pub fn abs(&mut self, x: Node) -> Node {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Node) -> Node {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Node) -> Node {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    fn unary(&mut self, x: Node, f: impl Fn(F) -> F, op: Op<F>) -> Node {
        let v = &self.nodes[x.0].value;
        let out = Tensor::from_vec(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape");
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    // ── Matrix product ──────────────────────────────────────────────────

    /// Batched matrix product `[.., m, k] · [.., k, n] -> [.., m, n]`;
    /// leading dims broadcast.
    pub fn matmul(&mut self, a: Node, b: Node) -> Result<Node> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul (operands must have rank >= 2)",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul (inner dimensions)",
                lhs: sa,
                rhs: sb,
            });
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let batch = broadcast_shapes(batch_a, batch_b).ok_or_else(|| Error::ShapeMismatch {
            op: "matmul (batch dimensions)",
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;

        let mut out_shape = batch.clone();
        out_shape.extend_from_slice(&[m, n]);
        let mut out: Tensor<F> = Tensor::zeros(out_shape);

        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bs_a = broadcast_strides(batch_a, &batch);
        let bs_b = broadcast_strides(batch_b, &batch);
        let nb: usize = batch.iter().product();
        let mut bidx = vec![0usize; batch.len()];
        for block in 0..nb {
            let (mut off_a, mut off_b) = (0usize, 0usize);
            for (d, &i) in bidx.iter().enumerate() {
                off_a += i * bs_a[d];
                off_b += i * bs_b[d];
            }
            unsafe {
                F::gemm(
                    m,
                    ka,
                    n,
                    F::ONE,
                    va.data().as_ptr().add(off_a * m * ka),
                    ka as isize,
                    1,
                    vb.data().as_ptr().add(off_b * ka * n),
                    n as isize,
                    1,
                    F::ZERO,
                    out.data_mut().as_mut_ptr().add(block * m * n),
                    n as isize,
                    1,
                );
            }
            increment(&mut bidx, &batch);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    // ── Shape manipulation ──────────────────────────────────────────────

    pub fn transpose_last2(&mut self, x: Node) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::InvalidShape {
                op: "transpose_last2",
                shape: s,
                reason: "rank must be >= 2".into(),
            });
        }
        let mut axes: Vec<usize> = (0..s.len()).collect();
        axes.swap(s.len() - 2, s.len() - 1);
        let v = permute_data(&self.nodes[x.0].value, &axes);
        let needs = self.needs(x);
        Ok(self.push(v, Op::TransposeLast2(x), needs))
    }

    pub fn permute(&mut self, x: Node, axes: &[usize]) -> Result<Node> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidShape {
                op: "permute",
                shape: s,
                reason: format!("{axes:?} is not a permutation of the axes"),
            });
        }
        let v = permute_data(&self.nodes[x.0].value, axes);
        let needs = self.needs(x);
        Ok(self.push(v, Op::Permute(x, axes.to_vec()), needs))
    }

    pub fn reshape(&mut self, x: Node, shape: Vec<usize>) -> Result<Node> {
        let v = self.nodes[x.0].value.clone().reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(v, Op::Reshape(x), needs))
    }

    pub fn concat(&mut self, inputs: &[Node], axis: usize) -> Result<Node> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for &node in inputs {
            let s = self.shape(node);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let mut out = Tensor::zeros(out_shape);
        let mut start = 0;
        for &node in inputs {
            let v = &self.nodes[node.0].value;
            paste_axis_range(&mut out, v, axis, start);
            start += v.shape()[axis];
        }
        let needs = inputs.iter().any(|&n| self.needs(n));
        Ok(self.push(out, Op::Concat(inputs.to_vec(), axis), needs))
    }

    pub fn slice(&mut self, x: Node, axis: usize, start: usize, len: usize) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: s,
                reason: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let v = copy_axis_range(&self.nodes[x.0].value, axis, start, len);
        let needs = self.needs(x);
        Ok(self.push(v, Op::Slice { input: x, axis, start }, needs))
    }

    pub fn index_select(&mut self, x: Node, axis: usize, indices: &[usize]) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || indices.iter().any(|&i| i >= s[axis]) {
            return Err(Error::InvalidShape {
                op: "index_select",
                shape: s,
                reason: format!("indices {indices:?} on axis {axis}"),
            });
        }
        let v = &self.nodes[x.0].value;
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape[axis] = indices.len();
        let mut out = Tensor::zeros(out_shape);
        for o in 0..outer {
            for (pos, &i) in indices.iter().enumerate() {
                let src = (o * s[axis] + i) * inner;
                let dst = (o * indices.len() + pos) * inner;
                out.data_mut()[dst..dst + inner].copy_from_slice(&v.data()[src..src + inner]);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::IndexSelect {
                input: x,
                axis,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.reduce_axis(x, axis, true)
    }

    fn reduce_axis(&mut self, x: Node, axis: usize, mean: bool) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidShape {
                op: "reduce_axis",
                shape: s,
                reason: format!("axis {axis} out of range"),
            });
        }
        let v = &self.nodes[x.0].value;
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let size = s[axis];
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let mut out = Tensor::zeros(out_shape);
        let scale = if mean {
            F::from_f64(1.0 / size as f64)
        } else {
            F::ONE
        };
        for o in 0..outer {
            for j in 0..size {
                let base = (o * size + j) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    out.data_mut()[dst + i] += v.data()[base + i] * scale;
                }
            }
        }
        let needs = self.needs(x);
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        Ok(self.push(out, op, needs))
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean_all(&mut self, x: Node) -> Node {
        let v = &self.nodes[x.0].value;
        let n = v.numel();
        let out = Tensor::scalar(sum_lanes(v.data()) * F::from_f64(1.0 / n as f64));
        let needs = self.needs(x);
        self.push(out, Op::MeanAll(x), needs)
    }

    /// Euclidean norm over the last axis: `[.., D] -> [..]`.
    pub fn norm_lastdim(&mut self, x: Node) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::InvalidShape {
                op: "norm_lastdim",
                shape: s,
                reason: "rank must be >= 1".into(),
            });
        }
        let v = &self.nodes[x.0].value;
        let d = s[s.len() - 1];
        let rows = v.numel() / d;
        let mut out = Tensor::zeros(s[..s.len() - 1].to_vec());
        for r in 0..rows {
            let mut acc = F::ZERO;
            for &e in &v.data()[r * d..(r + 1) * d] {
                acc += e * e;
            }
            out.data_mut()[r] = acc.sqrt();
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::NormLastDim(x), needs))
    }

    // ── Structured ops ──────────────────────────────────────────────────

    /// Row-wise softmax over the last axis, computed with max-subtraction.
    pub fn softmax_lastdim(&mut self, x: Node) -> Result<Node> {
        let s = self.shape(x).to_vec();
        if s.last().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidShape {
                op: "softmax_lastdim",
                shape: s,
                reason: "last dim must be >= 1".into(),
            });
        }
        let v = &self.nodes[x.0].value;
        let d = *s.last().unwrap();
        let rows = v.numel() / d;
        let mut out = Tensor::zeros(s);
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let m = max_lanes(row);
            let dst = &mut out.data_mut()[r * d..(r + 1) * d];
            for (o, &e) in dst.iter_mut().zip(row) {
                *o = (e - m).exp();
            }
            let inv = F::ONE / sum_lanes(dst);
            for o in dst.iter_mut() {
                *o *= inv;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::Softmax(x), needs))
    }

    /// Per-token normalization over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Node, gamma: Node, beta: Node, eps: F) -> Result<Node> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::InvalidShape {
            op: "layer_norm",
            shape: s.clone(),
            reason: "rank must be >= 1".into(),
        })?;
        for (name, n) in [("gamma", gamma), ("beta", beta)] {
            let gs = self.shape(n);
            if gs != [d] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gamma" {
                        "layer_norm (gamma)"
                    } else {
                        "layer_norm (beta)"
                    },
                    lhs: s.clone(),
                    rhs: gs.to_vec(),
                });
            }
        }
        let (vx, vg, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        let rows = vx.numel() / d;
        let inv_d = F::from_f64(1.0 / d as f64);
        let mut out = Tensor::zeros(s);
        let mut inv_std = vec![F::ZERO; rows];
        let mut xhat = vec![F::ZERO; rows * d];
        let (gs, bs) = (vg.data(), vb.data());
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mu = sum_lanes(row) * inv_d;
            let var = sumsq_dev_lanes(row, mu) * inv_d;
            let istd = F::ONE / (var + eps).sqrt();
            inv_std[r] = istd;
            let xh_row = &mut xhat[r * d..(r + 1) * d];
            let out_row = &mut out.data_mut()[r * d..(r + 1) * d];
            for (((o, xh), &xi), (&gi, &bi)) in out_row
                .iter_mut()
                .zip(xh_row.iter_mut())
                .zip(row)
                .zip(gs.iter().zip(bs))
            {
                let h = (xi - mu) * istd;
                *xh = h;
                *o = gi * h + bi;
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            },
            needs,
        ))
    }

    /// Inverted-scaling dropout. `p = 0` returns the input node unchanged.
    pub fn dropout(&mut self, x: Node, p: f64, rng: &mut Rng) -> Result<Node> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout p={p} outside [0, 1)")));
        }
        let v = &self.nodes[x.0].value;
        let scale = F::from_f64(1.0 / (1.0 - p));
        let mask: Vec<bool> = (0..v.numel()).map(|_| rng.uniform() >= p).collect();
        let data = v
            .data()
            .iter()
            .zip(&mask)
            .map(|(&e, &keep)| if keep { e * scale } else { F::ZERO })
            .collect();
        let out = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        Ok(self.push(out, Op::Dropout { input: x, mask, scale }, needs))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Consumes the graph; every
    /// gradient-requiring leaf ends with a gradient of its own shape.
    pub fn backward(self, loss: Node) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(
            self.nodes[loss.0].value.shape().to_vec(),
            F::ONE,
        ));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            // Leaves keep their accumulated gradient for the caller.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                self.accum_reduced(grads, *a, g);
                self.accum_reduced(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accum_reduced(grads, *a, g);
                if self.needs(*b) {
                    let neg = map_tensor(g, |e| -e);
                    self.accum_reduced(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let contrib = broadcast_apply("mul-bwd", g, self.value(*b), |gi, bi| gi * bi)
                        .expect("forward validated");
                    self.accum_reduced(grads, *a, &contrib);
                }
                if self.needs(*b) {
                    let contrib = broadcast_apply("mul-bwd", g, self.value(*a), |gi, ai| gi * ai)
                        .expect("forward validated");
                    self.accum_reduced(grads, *b, &contrib);
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    let contrib = broadcast_apply("div-bwd", g, self.value(*b), |gi, bi| gi / bi)
                        .expect("forward validated");
                    self.accum_reduced(grads, *a, &contrib);
                }
                if self.needs(*b) {
                    let ga = broadcast_apply("div-bwd", g, self.value(*a), |gi, ai| gi * ai)
                        .expect("forward validated");
                    let contrib =
                        broadcast_apply("div-bwd", &ga, self.value(*b), |n, bi| -n / (bi * bi))
                            .expect("forward validated");
                    self.accum_reduced(grads, *b, &contrib);
                }
            }

            Op::AddScalar(x) => self.accum(grads, *x, g.clone()),
            Op::MulScalar(x, c) => {
                let c = *c;
                self.accum(grads, *x, map_tensor(g, |e| e * c));
            }
            Op::Neg(x) => self.accum(grads, *x, map_tensor(g, |e| -e)),
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.accum(grads, *x, zip_tensor(g, vx, |gi, xi| {
                    if xi > F::ZERO {
                        gi
                    } else {
                        F::ZERO
                    }
                }));
            }
            Op::ClampMin(x, c) => {
                let (vx, c) = (self.value(*x), *c);
                self.accum(grads, *x, zip_tensor(g, vx, |gi, xi| {
                    if xi > c {
                        gi
                    } else {
                        F::ZERO
                    }
                }));
            }
            Op::Abs(x) => {
                let vx = self.value(*x);
                self.accum(grads, *x, zip_tensor(g, vx, |gi, xi| {
                    if xi > F::ZERO {
                        gi
                    } else if xi < F::ZERO {
                        -gi
                    } else {
                        F::ZERO
                    }
                }));
            }
            Op::Sqrt(x) => {
                let vy = self.value(Node(i));
                let half = F::from_f64(0.5);
                self.accum(grads, *x, zip_tensor(g, vy, |gi, yi| gi * half / yi));
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let two = F::from_f64(2.0);
                self.accum(grads, *x, zip_tensor(g, vx, |gi, xi| gi * two * xi));
            }

            Op::Matmul(a, b) => self.backward_matmul(i, *a, *b, g, grads),

            Op::TransposeLast2(x) => {
                let rank = g.shape().len();
                let mut axes: Vec<usize> = (0..rank).collect();
                axes.swap(rank - 2, rank - 1);
                self.accum(grads, *x, permute_data(g, &axes));
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (dst, &src) in axes.iter().enumerate() {
                    inverse[src] = dst;
                }
                self.accum(grads, *x, permute_data(g, &inverse));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accum(grads, *x, g.clone().reshaped(shape).expect("same numel"));
            }
            Op::Concat(inputs, axis) => {
                let mut start = 0;
                for &inp in inputs {
                    let len = self.shape(inp)[*axis];
                    if self.needs(inp) {
                        self.accum(grads, inp, copy_axis_range(g, *axis, start, len));
                    }
                    start += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let mut full = Tensor::zeros(self.shape(*input).to_vec());
                paste_axis_range(&mut full, g, *axis, *start);
                self.accum(grads, *input, full);
            }
            Op::IndexSelect {
                input,
                axis,
                indices,
            } => {
                let s = self.shape(*input).to_vec();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let mut full = Tensor::zeros(s.clone());
                for o in 0..outer {
                    for (pos, &idx) in indices.iter().enumerate() {
                        let src = (o * indices.len() + pos) * inner;
                        let dst = (o * s[*axis] + idx) * inner;
                        for k in 0..inner {
                            full.data_mut()[dst + k] += g.data()[src + k];
                        }
                    }
                }
                self.accum(grads, *input, full);
            }

            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let s = self.shape(*x).to_vec();
                let size = s[*axis];
                let scale = if matches!(self.nodes[i].op, Op::MeanAxis(..)) {
                    F::from_f64(1.0 / size as f64)
                } else {
                    F::ONE
                };
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let mut full = Tensor::zeros(s);
                for o in 0..outer {
                    for j in 0..size {
                        let dst = (o * size + j) * inner;
                        let src = o * inner;
                        for k in 0..inner {
                            full.data_mut()[dst + k] = g.data()[src + k] * scale;
                        }
                    }
                }
                self.accum(grads, *x, full);
            }
            Op::MeanAll(x) => {
                let v = self.value(*x);
                let scale = g.data()[0] * F::from_f64(1.0 / v.numel() as f64);
                self.accum(grads, *x, Tensor::full(v.shape().to_vec(), scale));
            }
            Op::NormLastDim(x) => {
                let vx = self.value(*x);
                let vy = self.value(Node(i));
                let d = *vx.shape().last().unwrap();
                let mut dx = Tensor::zeros(vx.shape().to_vec());
                for r in 0..vy.numel() {
                    let y = vy.data()[r];
                    if y == F::ZERO {
                        continue;
                    }
                    let coeff = g.data()[r] / y;
                    for k in 0..d {
                        dx.data_mut()[r * d + k] = vx.data()[r * d + k] * coeff;
                    }
                }
                self.accum(grads, *x, dx);
            }

            Op::Softmax(x) => {
                let vy = self.value(Node(i));
                let d = *vy.shape().last().unwrap();
                let rows = vy.numel() / d;
                let mut dx = Tensor::zeros(vy.shape().to_vec());
                for r in 0..rows {
                    let y = &vy.data()[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let dot = dot_lanes(gr, y);
                    let dst = &mut dx.data_mut()[r * d..(r + 1) * d];
                    for ((o, &yk), &gk) in dst.iter_mut().zip(y).zip(gr) {
                        *o = yk * (gk - dot);
                    }
                }
                self.accum(grads, *x, dx);
            }

            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let rows = xhat.len() / d;
                let vg = self.value(*gamma);
                let inv_d = F::from_f64(1.0 / d as f64);
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x).to_vec());
                    let gamma_data = vg.data();
                    let mut dxhat = vec![F::ZERO; d];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        for ((dh, &gk), &gm) in dxhat.iter_mut().zip(gr).zip(gamma_data) {
                            *dh = gk * gm;
                        }
                        let m1 = sum_lanes(&dxhat) * inv_d;
                        let m2 = dot_lanes(&dxhat, xh) * inv_d;
                        let dst = &mut dx.data_mut()[r * d..(r + 1) * d];
                        for ((o, &dh), &xhk) in dst.iter_mut().zip(&dxhat).zip(xh) {
                            *o = inv_std[r] * (dh - m1 - xhk * m2);
                        }
                    }
                    self.accum(grads, *x, dx);
                }
                if self.needs(*gamma) {
                    let mut dg = Tensor::zeros(vec![d]);
                    for r in 0..rows {
                        for k in 0..d {
                            dg.data_mut()[k] += g.data()[r * d + k] * xhat[r * d + k];
                        }
                    }
                    self.accum(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    let mut db = Tensor::zeros(vec![d]);
                    for r in 0..rows {
                        for k in 0..d {
                            db.data_mut()[k] += g.data()[r * d + k];
                        }
                    }
                    self.accum(grads, *beta, db);
                }
            }

            Op::Dropout { input, mask, scale } => {
                let scale = *scale;
                let data = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&gi, &keep)| if keep { gi * scale } else { F::ZERO })
                    .collect();
                let dx = Tensor::from_vec(g.shape().to_vec(), data).expect("same shape");
                self.accum(grads, *input, dx);
            }
        }
    }

    fn backward_matmul(&self, i: usize, a: Node, b: Node, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let out_shape = self.shape(Node(i));
        let batch = out_shape[..out_shape.len() - 2].to_vec();
        let bs_a = broadcast_strides(batch_a, &batch);
        let bs_b = broadcast_strides(batch_b, &batch);
        let nb: usize = batch.iter().product();

        let (va, vb) = (self.value(a), self.value(b));
        let mut ga: Option<Tensor<F>> = if self.needs(a) {
            Some(Tensor::zeros(sa.clone()))
        } else {
            None
        };
        let mut gb: Option<Tensor<F>> = if self.needs(b) {
            Some(Tensor::zeros(sb.clone()))
        } else {
            None
        };

        let mut bidx = vec![0usize; batch.len()];
        for block in 0..nb {
            let (mut off_a, mut off_b) = (0usize, 0usize);
            for (d, &ix) in bidx.iter().enumerate() {
                off_a += ix * bs_a[d];
                off_b += ix * bs_b[d];
            }
            let g_ptr = unsafe { g.data().as_ptr().add(block * m * n) };
            if let Some(ga) = ga.as_mut() {
                // dA = G · Bᵀ, accumulated over broadcast batch blocks.
                unsafe {
                    F::gemm(
                        m,
                        n,
                        k,
                        F::ONE,
                        g_ptr,
                        n as isize,
                        1,
                        vb.data().as_ptr().add(off_b * k * n),
                        1,
                        n as isize,
                        F::ONE,
                        ga.data_mut().as_mut_ptr().add(off_a * m * k),
                        k as isize,
                        1,
                    );
                }
            }
            if let Some(gb) = gb.as_mut() {
                // dB = Aᵀ · G.
                unsafe {
                    F::gemm(
                        k,
                        m,
                        n,
                        F::ONE,
                        va.data().as_ptr().add(off_a * m * k),
                        1,
                        k as isize,
                        g_ptr,
                        n as isize,
                        1,
                        F::ONE,
                        gb.data_mut().as_mut_ptr().add(off_b * k * n),
                        n as isize,
                        1,
                    );
                }
            }
            increment(&mut bidx, &batch);
        }
        if let Some(ga) = ga {
            self.accum(grads, a, ga);
        }
        if let Some(gb) = gb {
            self.accum(grads, b, gb);
        }
    }

    /// Accumulate `add` into `grads[node]` (sum over multiple consumers).
    fn accum(&self, grads: &mut [Option<Tensor<F>>], node: Node, add: Tensor<F>) {
        if !self.needs(node) {
            return;
        }
        match &mut grads[node.0] {
            Some(existing) => {
                for (d, s) in existing.data_mut().iter_mut().zip(add.data()) {
                    *d += *s;
                }
            }
            slot @ None => *slot = Some(add),
        }
    }

    /// Accumulate an output-shaped gradient into a possibly-broadcast input:
    /// sums over stretched axes so the result has the input's shape.
    fn accum_reduced(&self, grads: &mut [Option<Tensor<F>>], node: Node, g: &Tensor<F>) {
        if !self.needs(node) {
            return;
        }
        let target = self.shape(node).to_vec();
        let reduced = reduce_to_shape(g, &target);
        self.accum(grads, node, reduced);
    }
}

/// Multi-head scaled dot-product attention over `[.., L, d_h]` operands.
///
/// Dropout is applied to the attention weights only while training.
pub fn scaled_dot_attention<F: Real>(
    g: &mut Graph<F>,
    q: Node,
    k: Node,
    v: Node,
    dropout_p: f64,
    training: bool,
    rng: Option<&mut Rng>,
) -> Result<Node> {
    let d_h = *g
        .value(q)
        .shape()
        .last()
        .ok_or_else(|| Error::InvalidShape {
            op: "scaled_dot_attention",
            shape: vec![],
            reason: "q must have rank >= 2".into(),
        })?;
    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.mul_scalar(scores, F::from_f64(1.0 / (d_h as f64).sqrt()));
    let mut attn = g.softmax_lastdim(scaled)?;
    if training && dropout_p > 0.0 {
        let rng = rng.ok_or_else(|| {
            Error::InvalidArgument("attention dropout in training mode requires an RNG".into())
        })?;
        attn = g.dropout(attn, dropout_p, rng)?;
    }
    g.matmul(attn, v)
}

// ── Data-movement helpers ───────────────────────────────────────────────

fn map_tensor<F: Real>(t: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&e| f(e)).collect())
        .expect("same shape")
}

fn zip_tensor<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

/// Odometer over the leading axes that maintains per-input element offsets
/// incrementally (no per-row stride dot products).
struct OuterWalk<'a> {
    shape: &'a [usize],
    idx: Vec<usize>,
}

impl<'a> OuterWalk<'a> {
    fn new(shape: &'a [usize]) -> Self {
        OuterWalk {
            shape,
            idx: vec![0; shape.len()],
        }
    }

    /// Advance the index; adjust each offset by its stride set.
    fn step(&mut self, offsets: &mut [usize], strides: &[&[usize]]) {
        for d in (0..self.idx.len()).rev() {
            self.idx[d] += 1;
            if self.idx[d] < self.shape[d] {
                for (o, s) in offsets.iter_mut().zip(strides) {
                    *o += s[d];
                }
                return;
            }
            self.idx[d] = 0;
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o -= s[d] * (self.shape[d] - 1);
            }
        }
    }
}

/// Elementwise op with numpy broadcasting. Fast path for equal shapes,
/// otherwise a row walk with specialized contiguous inner loops.
fn broadcast_apply<F: Real>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    if a.shape() == b.shape() {
        return Ok(zip_tensor(a, b, f));
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut out = Tensor::zeros(out_shape.clone());
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer_shape = &out_shape[..rank - 1];
    let n_outer: usize = outer_shape.iter().product();

    let (da, db, dout) = (a.data(), b.data(), out.data_mut());
    let mut walk = OuterWalk::new(outer_shape);
    let mut offs = [0usize, 0usize];
    let strides = [&sa[..rank - 1], &sb[..rank - 1]];
    let mut dst = 0;
    for _ in 0..n_outer {
        let (off_a, off_b) = (offs[0], offs[1]);
        let row = &mut dout[dst..dst + inner];
        match (ia, ib) {
            (1, 1) => {
                let ra = &da[off_a..off_a + inner];
                let rb = &db[off_b..off_b + inner];
                for ((o, &x), &y) in row.iter_mut().zip(ra).zip(rb) {
                    *o = f(x, y);
                }
            }
            (1, 0) => {
                let ra = &da[off_a..off_a + inner];
                let y = db[off_b];
                for (o, &x) in row.iter_mut().zip(ra) {
                    *o = f(x, y);
                }
            }
            (0, 1) => {
                let x = da[off_a];
                let rb = &db[off_b..off_b + inner];
                for (o, &y) in row.iter_mut().zip(rb) {
                    *o = f(x, y);
                }
            }
            _ => {
                for (j, o) in row.iter_mut().enumerate() {
                    *o = f(da[off_a + j * ia], db[off_b + j * ib]);
                }
            }
        }
        dst += inner;
        walk.step(&mut offs, &strides);
    }
    Ok(out)
}

/// Sum an output-shaped gradient over axes that were broadcast, producing a
/// tensor of `target` shape.
fn reduce_to_shape<F: Real>(g: &Tensor<F>, target: &[usize]) -> Tensor<F> {
    if g.shape() == target {
        return g.clone();
    }
    let st = broadcast_strides(target, g.shape());
    let mut out = Tensor::zeros(target.to_vec());
    let rank = g.shape().len();
    let inner = g.shape()[rank - 1];
    let it = st[rank - 1];
    let outer_shape = &g.shape()[..rank - 1];
    let n_outer: usize = outer_shape.iter().product();

    let (src_data, dst_data) = (g.data(), out.data_mut());
    let mut walk = OuterWalk::new(outer_shape);
    let mut offs = [0usize];
    let strides = [&st[..rank - 1]];
    let mut src = 0;
    for _ in 0..n_outer {
        let off_t = offs[0];
        let row = &src_data[src..src + inner];
        if it == 1 {
            for (o, &v) in dst_data[off_t..off_t + inner].iter_mut().zip(row) {
                *o += v;
            }
        } else if it == 0 {
            let mut acc = F::ZERO;
            for &v in row {
                acc += v;
            }
            dst_data[off_t] += acc;
        } else {
            for (j, &v) in row.iter().enumerate() {
                dst_data[off_t + j * it] += v;
            }
        }
        src += inner;
        walk.step(&mut offs, &strides);
    }
    out
}

/// Sum with eight independent accumulators: a fixed deterministic order that
/// breaks the serial FP dependency chain so the loop vectorizes.
#[inline]
fn sum_lanes<F: Real>(xs: &[F]) -> F {
    let mut acc = [F::ZERO; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in chunks.by_ref() {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let mut tail = F::ZERO;
    for &v in chunks.remainder() {
        tail += v;
    }
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// Dot product, eight lanes.
#[inline]
fn dot_lanes<F: Real>(xs: &[F], ys: &[F]) -> F {
    let mut acc = [F::ZERO; 8];
    let mut xc = xs.chunks_exact(8);
    let mut yc = ys.chunks_exact(8);
    for (cx, cy) in xc.by_ref().zip(yc.by_ref()) {
        for ((a, &x), &y) in acc.iter_mut().zip(cx).zip(cy) {
            *a += x * y;
        }
    }
    let mut tail = F::ZERO;
    for (&x, &y) in xc.remainder().iter().zip(yc.remainder()) {
        tail += x * y;
    }
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// Sum of squared deviations from `mu`, eight lanes.
#[inline]
fn sumsq_dev_lanes<F: Real>(xs: &[F], mu: F) -> F {
    let mut acc = [F::ZERO; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in chunks.by_ref() {
        for (a, &v) in acc.iter_mut().zip(c) {
            let d = v - mu;
            *a += d * d;
        }
    }
    let mut tail = F::ZERO;
    for &v in chunks.remainder() {
        let d = v - mu;
        tail += d * d;
    }
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// Row maximum, eight lanes.
#[inline]
fn max_lanes<F: Real>(xs: &[F]) -> F {
    let mut acc = [xs[0]; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in chunks.by_ref() {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = a.max(v);
        }
    }
    let mut m = acc[0];
    for &a in &acc[1..] {
        m = m.max(a);
    }
    for &v in chunks.remainder() {
        m = m.max(v);
    }
    m
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

fn permute_data<F: Real>(t: &Tensor<F>, axes: &[usize]) -> Tensor<F> {
    let in_shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides_of(in_shape);
    // Source strides in output-axis order.
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Tensor::zeros(out_shape.clone());
    if t.numel() == 0 {
        return out;
    }
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let inner_stride = perm_strides[rank - 1];
    let outer_shape = &out_shape[..rank - 1];
    let n_outer: usize = outer_shape.iter().product();

    let (src_data, dst_data) = (t.data(), out.data_mut());
    let mut walk = OuterWalk::new(outer_shape);
    let mut offs = [0usize];
    let strides = [&perm_strides[..rank - 1]];
    let mut dst = 0;
    for _ in 0..n_outer {
        let base = offs[0];
        let row = &mut dst_data[dst..dst + inner];
        if inner_stride == 1 {
            row.copy_from_slice(&src_data[base..base + inner]);
        } else {
            let mut src = base;
            for o in row.iter_mut() {
                *o = src_data[src];
                src += inner_stride;
            }
        }
        dst += inner;
        walk.step(&mut offs, &strides);
    }
    out
}

/// Copy `len` positions starting at `start` along `axis` into a new tensor.
fn copy_axis_range<F: Real>(t: &Tensor<F>, axis: usize, start: usize, len: usize) -> Tensor<F> {
    let s = t.shape();
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let mut out_shape = s.to_vec();
    out_shape[axis] = len;
    let mut out = Tensor::zeros(out_shape);
    for o in 0..outer {
        let src = (o * s[axis] + start) * inner;
        let dst = o * len * inner;
        out.data_mut()[dst..dst + len * inner].copy_from_slice(&t.data()[src..src + len * inner]);
    }
    out
}

/// Write `src` into `dst` at `start` along `axis` (inverse of `copy_axis_range`).
fn paste_axis_range<F: Real>(dst: &mut Tensor<F>, src: &Tensor<F>, axis: usize, start: usize) {
    let sd = dst.shape().to_vec();
    let ss = src.shape();
    let outer: usize = sd[..axis].iter().product();
    let inner: usize = sd[axis + 1..].iter().product();
    let len = ss[axis];
    for o in 0..outer {
        let d = (o * sd[axis] + start) * inner;
        let s = o * len * inner;
        dst.data_mut()[d..d + len * inner].copy_from_slice(&src.data()[s..s + len * inner]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::new();
        let i = g.input(&tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(&tensor(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let out = g.matmul(i, b).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut g = Graph::<f64>::new();
        let a = g.input(&tensor(&[1, 2], &[1.0, 2.0]));
        let b = g.input(&tensor(&[2, 1], &[3.0, 4.0]));
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(&Tensor::zeros(vec![2, 3]));
        let b = g.input(&Tensor::zeros(vec![4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_batched_broadcasts_weights() {
        // [2, 2, 3] · [3, 2] -> [2, 2, 2]
        let mut g = Graph::<f64>::new();
        let a = g.input(&tensor(
            &[2, 2, 3],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
        ));
        let w = g.input(&tensor(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let out = g.matmul(a, w).unwrap();
        assert_eq!(g.value(out).shape(), &[2, 2, 2]);
        assert_eq!(
            g.value(out).data(),
            &[4.0, 5.0, 10.0, 11.0, 16.0, 17.0, 22.0, 23.0]
        );
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax_lastdim(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[3], &[1000.0, 0.0, 0.0]));
        let y = g.softmax_lastdim(x).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 1.0).abs() < 1e-6);
        assert!(d[1] < 1e-6 && d[2] < 1e-6);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[1, 4], &[5.0, 5.0, 5.0, 5.0]));
        let gamma = g.input(&Tensor::full(vec![4], 1.0));
        let beta = g.input(&Tensor::zeros(vec![4]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_gamma_yields_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[2, 3], &[1.0, -4.0, 2.5, 0.0, 9.0, 3.0]));
        let gamma = g.input(&Tensor::zeros(vec![3]));
        let beta = g.input(&tensor(&[3], &[0.5, -1.0, 2.0]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn attention_single_key_returns_value_row() {
        // L = 1: softmax over one key is exactly 1, output equals v.
        let mut g = Graph::<f64>::new();
        let q = g.input(&tensor(&[1, 1, 2], &[0.3, -0.7]));
        let k = g.input(&tensor(&[1, 1, 2], &[2.0, 5.0]));
        let v = g.input(&tensor(&[1, 1, 2], &[9.0, -3.0]));
        let out = scaled_dot_attention(&mut g, q, k, v, 0.0, false, None).unwrap();
        assert_eq!(g.value(out).data(), &[9.0, -3.0]);
    }

    #[test]
    fn attention_orthogonal_query_averages_values() {
        // q ⟂ every k row -> zero logits -> uniform weights.
        let mut g = Graph::<f64>::new();
        let q = g.input(&tensor(&[1, 2], &[1.0, 0.0]));
        let k = g.input(&tensor(&[2, 2], &[0.0, 1.0, 0.0, -2.0]));
        let v = g.input(&tensor(&[2, 2], &[4.0, 0.0, 0.0, 8.0]));
        let out = scaled_dot_attention(&mut g, q, k, v, 0.0, false, None).unwrap();
        let d = g.value(out).data();
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!((d[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let w = g.param(&tensor(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let s = g.sum_axis(w, 0).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_sum_squares_is_w() {
        let mut g = Graph::<f64>::new();
        let w = g.param(&tensor(&[3], &[1.5, -2.0, 0.5]));
        let sq = g.square(w);
        let s = g.sum_axis(sq, 0).unwrap();
        let loss = g.mul_scalar(s, 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.5, -2.0, 0.5]);
    }

    #[test]
    fn backward_accumulates_across_two_consumers() {
        // y = w * 2 and z = w * 3 feed s = sum(y + z): dw = 5 per element.
        let mut g = Graph::<f64>::new();
        let w = g.param(&tensor(&[2], &[1.0, -1.0]));
        let y = g.mul_scalar(w, 2.0);
        let z = g.mul_scalar(w, 3.0);
        let sum = g.add(y, z).unwrap();
        let s = g.sum_axis(sum, 0).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let w = g.param(&tensor(&[2], &[1.0, 2.0]));
        let y = g.mul_scalar(w, 2.0);
        match g.backward(y) {
            Err(Error::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn dropout_p_zero_is_identity_node() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::seed_from_u64(0);
        let x = g.input(&tensor(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_surviving_elements() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::seed_from_u64(7);
        let x = g.input(&Tensor::full(vec![10_000], 1.0));
        let y = g.dropout(x, 0.25, &mut rng).unwrap();
        let d = g.value(y).data();
        let kept = d.iter().filter(|&&v| v != 0.0).count();
        for &v in d.iter().filter(|&&v| v != 0.0) {
            assert!((v - 1.0 / 0.75).abs() < 1e-12);
        }
        let frac = kept as f64 / d.len() as f64;
        assert!((frac - 0.75).abs() < 0.02, "kept {frac}");
    }

    #[test]
    fn broadcast_add_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.param(&tensor(&[3], &[10.0, 20.0, 30.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let m = g.mean_all(y);
        let grads = g.backward(m).unwrap();
        // d mean / d bias_k = 2 rows / 6 elements = 1/3 each.
        for &v in grads.get(b).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[2, 3, 4], &(0..24).map(|v| v as f64).collect::<Vec<_>>()));
        let p = g.permute(x, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(p).shape(), &[3, 4, 2]);
        let back = g.permute(p, &[2, 0, 1]).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn slice_and_concat_invert() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[2, 5], &(0..10).map(|v| v as f64).collect::<Vec<_>>()));
        let a = g.slice(x, 1, 0, 2).unwrap();
        let b = g.slice(x, 1, 2, 3).unwrap();
        let joined = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(joined).data(), g.value(x).data());
    }

    #[test]
    fn index_select_gathers_rows() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.index_select(x, 0, &[2, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn norm_lastdim_three_four_five() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&tensor(&[1, 2], &[3.0, 4.0]));
        let y = g.norm_lastdim(x).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
    }
}
