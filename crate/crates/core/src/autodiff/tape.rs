use std::ops::Range;

use super::{AutogradError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// Right operand repeats over the left operand's leading dimension.
    Right,
    /// Left operand repeats over the right operand's leading dimension.
    Left,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        range: Range<usize>,
    },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Reshape(Var),
    Transpose01(Var),
    GatherRows {
        src: Var,
        rows: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph recorded in execution order.
///
/// Every operation appends one node whose operands were recorded earlier, so
/// the node vector is already a topological order and backward is a single
/// reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contrib: Vec<f64>) {
    match &mut grads[var.0] {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(&contrib) {
                *gi += ci;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `var`.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients
    /// are tracked through it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutogradError {
        AutogradError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn require_2d(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutogradError> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    /// `a · b` for 2-D operands `[m × k]` and `[k × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.require_2d("matmul", a, b)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for (i, crow) in out.chunks_exact_mut(n).enumerate() {
            for p in 0..k {
                axpy(av[i * k + p], &bv[p * n..(p + 1) * n], crow);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for 2-D operands `[m × k]` and `[n × k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.require_2d("matmul_nt", a, b)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (n, k2) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for (i, crow) in out.chunks_exact_mut(n).enumerate() {
            let arow = &av[i * k..(i + 1) * k];
            for (j, c) in crow.iter_mut().enumerate() {
                *c = dot(arow, &bv[j * k..(j + 1) * k]);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast, AutogradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::None)
        } else if sa.len() == sb.len() + 1 && &sa[1..] == sb {
            Ok(Broadcast::Right)
        } else if sb.len() == sa.len() + 1 && &sb[1..] == sa {
            Ok(Broadcast::Left)
        } else {
            Err(self.mismatch(op, a, b))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Var, Var, Broadcast) -> Op,
    ) -> Result<Var, AutogradError> {
        let kind = self.broadcast_kind(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (shape, data) = match kind {
            Broadcast::None => (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect(),
            ),
            Broadcast::Right => {
                let inner = bv.len();
                let data = av
                    .data()
                    .chunks_exact(inner)
                    .flat_map(|row| row.iter().zip(bv.data()).map(|(x, y)| f(*x, *y)))
                    .collect();
                (av.shape().to_vec(), data)
            }
            Broadcast::Left => {
                let inner = av.len();
                let data = bv
                    .data()
                    .chunks_exact(inner)
                    .flat_map(|row| av.data().iter().zip(row).map(|(x, y)| f(*x, *y)))
                    .collect();
                (bv.shape().to_vec(), data)
            }
        };
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, make(a, b, kind), rg))
    }

    /// Elementwise sum; the lower-rank operand may repeat over the leading dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("mul_elementwise", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutogradError> {
        let first = *parts.first().ok_or(AutogradError::EmptyOperands { op: "concat" })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(AutogradError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Result<Var, AutogradError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(AutogradError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if range.start >= range.end || range.end > shape[axis] {
            return Err(AutogradError::IndexOutOfRange {
                op: "slice",
                index: range.end,
                bound: shape[axis],
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let width = (range.end - range.start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let start = o * dim * inner + range.start * inner;
            data.extend_from_slice(&src[start..start + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = range.end - range.start;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Slice { src: a, axis, range }, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutogradError> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(AutogradError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutogradError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Swaps the first two axes (the matrix transpose for 2-D input).
    pub fn transpose01(&mut self, a: Var) -> Result<Var, AutogradError> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(AutogradError::AxisOutOfRange {
                op: "transpose01",
                axis: 1,
                rank: shape.len(),
            });
        }
        let (d0, d1) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let from = (i * d1 + j) * inner;
                let to = (j * d0 + i) * inner;
                data[to..to + inner].copy_from_slice(&src[from..from + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.swap(0, 1);
        let value = Tensor::new(out_shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose01(a), rg))
    }

    /// Selects rows of a 2-D tensor; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutogradError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "gather_rows",
                left: shape,
                right: vec![rows.len()],
            });
        }
        if rows.is_empty() {
            return Err(AutogradError::EmptyOperands { op: "gather_rows" });
        }
        let (n, cols) = (shape[0], shape[1]);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(AutogradError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    bound: n,
                });
            }
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(vec![rows.len(), cols], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::GatherRows {
                src: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Summed token cross-entropy of `logits` (any shape whose last axis is
    /// the class axis) against one target per row. Rows whose target equals
    /// `ignore` contribute nothing to the value or the gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, AutogradError> {
        let shape = self.shape(logits).to_vec();
        let classes = *shape.last().expect("tensors have rank >= 1");
        let rows = self.value(logits).len() / classes;
        if targets.len() != rows {
            return Err(AutogradError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: shape,
                right: vec![targets.len()],
            });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        for (r, (&target, row)) in targets.iter().zip(src.chunks_exact(classes)).enumerate() {
            if Some(target) == ignore {
                continue;
            }
            if target >= classes {
                return Err(AutogradError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: target,
                    bound: classes,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[r * classes..(r + 1) * classes];
            let mut z = 0.0;
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
            total += max + z.ln() - row[target];
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element `loss`, filling gradients for every
    /// node that requires them. Gradients from multiple consumers add up.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(AutogradError::NotScalar {
                shape: loss_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let (av, bv) = (val(a), val(b));
                if rg(a) {
                    let da = slot(grads, a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] += dot(grow, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if rg(b) {
                    let db = slot(grads, b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(av[i * k + p], grow, &mut db[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[0];
                let (av, bv) = (val(a), val(b));
                if rg(a) {
                    let da = slot(grads, a, m * k);
                    for i in 0..m {
                        let drow = &mut da[i * k..(i + 1) * k];
                        for j in 0..n {
                            axpy(g[i * n + j], &bv[j * k..(j + 1) * k], drow);
                        }
                    }
                }
                if rg(b) {
                    let db = slot(grads, b, n * k);
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        for j in 0..n {
                            axpy(g[i * n + j], arow, &mut db[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            &Op::Add(a, b, kind) => {
                self.backprop_binary(a, b, kind, g, grads, |_, _| (1.0, 1.0));
            }
            &Op::Sub(a, b, kind) => {
                self.backprop_binary(a, b, kind, g, grads, |_, _| (1.0, -1.0));
            }
            &Op::Mul(a, b, kind) => {
                self.backprop_binary(a, b, kind, g, grads, |x, y| (y, x));
            }
            &Op::Scale(a, factor) => {
                accumulate(grads, a, g.iter().map(|x| x * factor).collect());
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p)[*axis] * inner;
                    if rg(p) {
                        let mut contrib = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            let start = o * total * inner + offset;
                            contrib.extend_from_slice(&g[start..start + width]);
                        }
                        accumulate(grads, p, contrib);
                    }
                    offset += width;
                }
            }
            Op::Slice { src, axis, range } => {
                let shape = self.shape(*src);
                let (outer, dim, inner) = split_axis(shape, *axis);
                let width = (range.end - range.start) * inner;
                let ds = slot(grads, *src, outer * dim * inner);
                for o in 0..outer {
                    let start = o * dim * inner + range.start * inner;
                    for (d, gi) in ds[start..start + width].iter_mut().zip(&g[o * width..]) {
                        *d += gi;
                    }
                }
            }
            &Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(grads, a, g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect());
            }
            &Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(grads, a, g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect());
            }
            &Op::Exp(a) => {
                let y = node.value.data();
                accumulate(grads, a, g.iter().zip(y).map(|(gi, yi)| gi * yi).collect());
            }
            &Op::Log(a) => {
                accumulate(grads, a, g.iter().zip(val(a)).map(|(gi, xi)| gi / xi).collect());
            }
            &Op::Sum(a) => {
                accumulate(grads, a, vec![g[0]; val(a).len()]);
            }
            &Op::Reshape(a) => accumulate(grads, a, g.to_vec()),
            &Op::Transpose01(a) => {
                let shape = self.shape(a);
                let (d0, d1) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let da = slot(grads, a, d0 * d1 * inner);
                for i in 0..d0 {
                    for j in 0..d1 {
                        let to = (i * d1 + j) * inner;
                        let from = (j * d0 + i) * inner;
                        for (d, gi) in da[to..to + inner].iter_mut().zip(&g[from..from + inner]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::GatherRows { src, rows } => {
                let shape = self.shape(*src);
                let cols = shape[1];
                let ds = slot(grads, *src, shape[0] * cols);
                for (k, &r) in rows.iter().enumerate() {
                    for (d, gi) in ds[r * cols..(r + 1) * cols].iter_mut().zip(&g[k * cols..]) {
                        *d += gi;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                ignore,
                probs,
            } => {
                let classes = *self.shape(*logits).last().expect("rank >= 1");
                let dl = slot(grads, *logits, probs.len());
                for (r, &target) in targets.iter().enumerate() {
                    if Some(target) == *ignore {
                        continue;
                    }
                    let row = &mut dl[r * classes..(r + 1) * classes];
                    axpy(g[0], &probs[r * classes..(r + 1) * classes], row);
                    row[target] -= g[0];
                }
            }
        }
    }

    fn backprop_binary(
        &self,
        a: Var,
        b: Var,
        kind: Broadcast,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        partials: impl Fn(f64, f64) -> (f64, f64),
    ) {
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (ga, gb) = (self.nodes[a.0].requires_grad, self.nodes[b.0].requires_grad);
        let n = g.len();
        let xa = |i: usize| match kind {
            Broadcast::Left => av[i % av.len()],
            _ => av[i],
        };
        let xb = |i: usize| match kind {
            Broadcast::Right => bv[i % bv.len()],
            _ => bv[i],
        };
        if ga {
            let da = slot(grads, a, av.len());
            for i in 0..n {
                let (pa, _) = partials(xa(i), xb(i));
                da[i % av.len()] += g[i] * pa;
            }
        }
        if gb {
            let db = slot(grads, b, bv.len());
            for i in 0..n {
                let (_, pb) = partials(xa(i), xb(i));
                db[i % bv.len()] += g[i] * pb;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
