//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Tape`]; node indices are handed out
//! as [`Var`] handles. Operands always precede their consumers, so a single
//! reverse sweep visits each node once. A tape lives for one forward pass.

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, Layout};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    ReduceMax { x: Var, index: usize },
    Select { x: Var, index: usize },
    Row { x: Var, row: usize },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Numerically stable logistic function; saturates to exactly 0 or 1 for
/// large magnitudes without overflowing.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, op: &'static str, shape: Vec<usize>, value: Vec<f64>, kind: Op) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        check_finite(op, &value)?;
        let requires_grad = match &kind {
            Op::Leaf => false,
            other => operands(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as a leaf. The leaf tracks gradients iff the tensor does.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (never differentiated) leaf.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(Error::Dimension(format!(
                "constant of shape {shape:?} given {} values",
                value.len()
            )));
        }
        self.push("constant", shape, value, Op::Leaf)
    }

    /// Records a differentiable leaf from raw values.
    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let v = self.constant(shape, value)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what} must be a matrix, got shape {s:?}"))),
        }
    }

    fn vector_len(&self, v: Var, what: &str) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::Dimension(format!("{what} must be a vector, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            Layout::Normal,
            self.value(b),
            Layout::Normal,
            &mut out,
            false,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    /// `x · wᵀ + b` for `x: [n×in]`, `w: [out×in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fan_in) = self.matrix_dims(x, "linear input")?;
        let (fan_out, w_in) = self.matrix_dims(w, "linear weight")?;
        if fan_in != w_in {
            return Err(Error::Dimension(format!(
                "linear: input width {fan_in} but weight is [{fan_out}x{w_in}]"
            )));
        }
        let mut out = vec![0.0; n * fan_out];
        if let Some(b) = b {
            let bl = self.vector_len(b, "linear bias")?;
            if bl != fan_out {
                return Err(Error::Dimension(format!(
                    "linear: bias length {bl} but {fan_out} outputs"
                )));
            }
            let bias = self.value(b);
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            n,
            fan_in,
            fan_out,
            self.value(x),
            Layout::Normal,
            self.value(w),
            Layout::Transposed,
            &mut out,
            b.is_some(),
        );
        self.push("linear", vec![n, fan_out], out, Op::Linear { x, w, b })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "transpose")?;
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], out, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape, out, Op::Reshape(x))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(x).iter().map(|&v| f(v)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push("sub", shape, out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant of the same shape (no gradient to
    /// the constant).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "mul_const: {} factors for {} values",
                c.len(),
                self.value(x).len()
            )));
        }
        let out: Vec<f64> = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_const", shape, out, Op::MulConst(x, c))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.map(x, |v| v * s);
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.map(x, |v| v + s);
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", shape, out, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::tanh);
        let shape = self.shape(x).to_vec();
        self.push("tanh", shape, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, sigmoid_scalar);
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", shape, out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.max(0.0));
        let shape = self.shape(x).to_vec();
        self.push("relu", shape, out, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::exp);
        let shape = self.shape(x).to_vec();
        self.push("exp", shape, out, Op::Exp(x))
    }

    /// Natural log. Every input must be strictly positive; callers clamp first.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of nonpositive value {bad}")));
        }
        let out = self.map(x, f64::ln);
        let shape = self.shape(x).to_vec();
        self.push("log", shape, out, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Domain(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        let out = self.map(x, |v| v.clamp(lo, hi));
        let shape = self.shape(x).to_vec();
        self.push("clamp", shape, out, Op::Clamp { x, lo, hi })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len(x, "softmax")?;
        if n == 0 {
            return Err(Error::Dimension("softmax of empty vector".into()));
        }
        let out = softmax_values(self.value(x));
        self.push("softmax", vec![n], out, Op::Softmax(x))
    }

    /// Maximum of a vector and the lowest index attaining it.
    pub fn reduce_max(&mut self, x: Var) -> Result<(Var, usize)> {
        let n = self.vector_len(x, "reduce_max")?;
        if n == 0 {
            return Err(Error::Dimension("reduce_max of empty vector".into()));
        }
        let index = argmax(self.value(x));
        let value = self.value(x)[index];
        let v = self.push("reduce_max", vec![], vec![value], Op::ReduceMax { x, index })?;
        Ok((v, index))
    }

    /// Scalar element `index` of a vector.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.vector_len(x, "select")?;
        if index >= n {
            return Err(Error::Dimension(format!("select index {index} out of {n}")));
        }
        let value = self.value(x)[index];
        self.push("select", vec![], vec![value], Op::Select { x, index })
    }

    /// Row `row` of a matrix as a vector.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "row")?;
        if row >= r {
            return Err(Error::Dimension(format!("row {row} out of {r}")));
        }
        let out = self.value(x)[row * c..(row + 1) * c].to_vec();
        self.push("row", vec![c], out, Op::Row { x, row })
    }

    /// Flattens and concatenates the operands into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of nothing".into()));
        }
        let out: Vec<f64> = parts.iter().flat_map(|&v| self.value(v).iter().copied()).collect();
        let n = out.len();
        self.push("concat", vec![n], out, Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Dimension("mean of empty tensor".into()));
        }
        let s = self.value(x).iter().sum::<f64>() / n as f64;
        self.push("mean", vec![], vec![s], Op::Mean(x))
    }

    /// Reverse sweep from a scalar loss. Afterwards [`Tape::grad`] returns
    /// `dLoss/dNode` for every node that tracks gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            check_finite("backward", &g)?;
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward's loss with respect to `v`, if any
    /// path reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds this tape's gradient for `v` into the tensor's gradient buffer.
    pub fn accumulate_grad(&self, v: Var, t: &mut Tensor) -> Result<()> {
        let Some(g) = self.grad(v) else { return Ok(()) };
        let buf = t
            .grad_mut()
            .ok_or_else(|| Error::Contract("tensor does not track gradients".into()))?;
        if buf.len() != g.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor with {} values",
                g.len(),
                buf.len()
            )));
        }
        buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                send(*a, &|da| gemm(m, n, k, g, Layout::Normal, bv, Layout::Transposed, da, true));
                send(*b, &|db| gemm(k, m, n, av, Layout::Transposed, g, Layout::Normal, db, true));
            }
            Op::Linear { x, w, b } => {
                let (n, fan_in) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let fan_out = self.nodes[w.0].shape[0];
                let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                send(*x, &|dx| {
                    gemm(n, fan_out, fan_in, g, Layout::Normal, wv, Layout::Normal, dx, true)
                });
                send(*w, &|dw| {
                    gemm(fan_out, n, fan_in, g, Layout::Transposed, xv, Layout::Normal, dw, true)
                });
                if let Some(b) = b {
                    send(*b, &|db| {
                        for row in g.chunks_exact(fan_out) {
                            db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                    });
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                send(*x, &|dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => send(*x, &|dx| add_into(dx, g)),
            Op::Add(a, b) => {
                send(*a, &|da| add_into(da, g));
                send(*b, &|db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                send(*a, &|da| add_into(da, g));
                send(*b, &|db| db.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                send(*a, &|da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                send(*b, &|db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::MulConst(x, c) => send(*x, &|dx| {
                for ((d, gi), ci) in dx.iter_mut().zip(g).zip(c) {
                    *d += gi * ci;
                }
            }),
            Op::Scale(x, s) => send(*x, &|dx| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * s)),
            Op::AddScalar(x) => send(*x, &|dx| add_into(dx, g)),
            Op::Tanh(x) => {
                let y = &node.value;
                send(*x, &|dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                send(*x, &|dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                send(*x, &|dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.value;
                send(*x, &|dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi;
                    }
                });
            }
            Op::Log(x) => {
                let xv = &self.nodes[x.0].value;
                send(*x, &|dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gi / xi;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.nodes[x.0].value;
                send(*x, &|dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi >= *lo && *xi <= *hi {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                send(*x, &|dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += yi * (gi - dot);
                    }
                });
            }
            Op::ReduceMax { x, index } | Op::Select { x, index } => {
                send(*x, &|dx| dx[*index] += g[0]);
            }
            Op::Row { x, row } => {
                let c = self.nodes[x.0].shape[1];
                send(*x, &|dx| add_into(&mut dx[row * c..(row + 1) * c], g));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    send(p, &|dp| add_into(dp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Sum(x) => send(*x, &|dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                send(*x, &|dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn operands(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Concat(parts) => parts.clone(),
        Op::Linear { x, w, b } => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::Transpose(x)
        | Op::Reshape(x)
        | Op::MulConst(x, _)
        | Op::Scale(x, _)
        | Op::AddScalar(x)
        | Op::Tanh(x)
        | Op::Sigmoid(x)
        | Op::Relu(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::Softmax(x)
        | Op::Sum(x)
        | Op::Mean(x) => vec![*x],
        Op::Clamp { x, .. } | Op::ReduceMax { x, .. } | Op::Select { x, .. } | Op::Row { x, .. } => {
            vec![*x]
        }
    }
}

/// Max-shifted softmax over a slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(t: &mut Tape, shape: Vec<usize>, v: Vec<f64>) -> Var {
        t.variable(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let mut t = Tape::new();
        let eye = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = t.constant(vec![2, 2], vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let y = t.matmul(eye, x).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let a = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = t.constant(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = t.matmul(a, ones).unwrap();
        assert_eq!(t.shape(c), &[2, 1]);
        assert_eq!(t.value(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let mut t = Tape::new();
        let x = t.constant(vec![3], vec![0.0, 1000.0, -1000.0]).unwrap();
        let s = t.sigmoid(x).unwrap();
        let v = t.value(s);
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() <= 1e-12);
        assert!(v[2].abs() <= 1e-12);
    }

    #[test]
    fn softmax_uniform_singleton_and_empty() {
        let mut t = Tape::new();
        let x = t.constant(vec![4], vec![2.5; 4]).unwrap();
        let s = t.softmax(x).unwrap();
        assert_eq!(t.value(s), &[0.25; 4]);
        let one = t.constant(vec![1], vec![0.0]).unwrap();
        let s1 = t.softmax(one).unwrap();
        assert_eq!(t.value(s1), &[1.0]);
        let empty = t.constant(vec![0], vec![]).unwrap();
        assert!(matches!(t.softmax(empty), Err(Error::Dimension(_))));
    }

    #[test]
    fn reduce_max_tie_break_and_empty() {
        let mut t = Tape::new();
        let x = t.constant(vec![3], vec![3.0, 1.0, 2.0]).unwrap();
        let (m, i) = t.reduce_max(x).unwrap();
        assert_eq!((t.scalar(m), i), (3.0, 0));
        let y = t.constant(vec![3], vec![5.0, 5.0, 1.0]).unwrap();
        let (m, i) = t.reduce_max(y).unwrap();
        assert_eq!((t.scalar(m), i), (5.0, 0));
        let e = t.constant(vec![0], vec![]).unwrap();
        assert!(t.reduce_max(e).is_err());
    }

    #[test]
    fn reduce_max_routes_gradient_to_argmax() {
        let mut t = Tape::new();
        let x = var(&mut t, vec![3], vec![0.1, 0.9, -0.4]);
        let (m, _) = t.reduce_max(x).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn elementwise_basics() {
        let mut t = Tape::new();
        let z = t.constant(vec![1], vec![0.0]).unwrap();
        let th = t.tanh(z).unwrap();
        assert_eq!(t.value(th), &[0.0]);
        let c = t.constant(vec![1], vec![1.5]).unwrap();
        let cl = t.clamp(c, 0.0, 1.0).unwrap();
        assert_eq!(t.value(cl), &[1.0]);
        let neg = t.constant(vec![2], vec![0.5, 0.0]).unwrap();
        assert!(matches!(t.log(neg), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_log_inverse_pair() {
        let mut t = Tape::new();
        let xs: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let x = t.constant(vec![xs.len()], xs.clone()).unwrap();
        let l = t.log(x).unwrap();
        let e = t.exp(l).unwrap();
        for (a, b) in t.value(e).iter().zip(&xs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_sum_and_square() {
        let mut t = Tape::new();
        let x = var(&mut t, vec![3], vec![1.0, -2.0, 0.5]);
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = var(&mut t, vec![3], vec![1.0, -2.0, 0.5]);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_accumulates_repeated_use() {
        let mut t = Tape::new();
        let x = var(&mut t, vec![], vec![0.7]);
        let y = t.add(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = var(&mut t, vec![2], vec![1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut t = Tape::new();
        let x = t.constant(vec![1], vec![800.0]).unwrap();
        assert!(matches!(t.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let x = var(&mut t, vec![2], vec![3.0, 4.0]);
        let p = t.mul(c, x).unwrap();
        let s = t.sum(p).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
