//! Reverse-mode gradient tape.
//!
//! A [`Tape`] is an append-only arena of nodes. Every op pushes one node
//! holding the forward value plus enough information to replay the op
//! backward. [`Var`] is a plain index into the arena, so building graphs costs
//! one `Vec` push per op and no reference counting.
//!
//! Gradients live on the tape: [`Tape::backward`] seeds the loss node with 1
//! and accumulates into every node that requires gradients. Calling `backward`
//! again without [`Tape::zero_grad`] accumulates on top — callers that want
//! fresh gradients must zero explicitly. Parameters bound with [`Tape::param`]
//! are remembered so their gradients can be pushed back into the owning
//! [`ParamSet`] after the backward pass.
//!
//! A tape built with [`Tape::inactive`] evaluates ops normally but records no
//! backward information; rollouts use this to skip bookkeeping they will never
//! differentiate.

use super::params::{ParamId, ParamSet};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    Abs(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softmax { input: Var, axis: usize },
    Square(Var),
    Sqrt(Var),
    Gather { input: Var, rows: Vec<usize> },
    BroadcastAddBias(Var, Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode tape; see the module docs for the usage contract.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
    active: bool,
}

impl Tape {
    /// A tape that records backward information.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bindings: Vec::new(), active: true }
    }

    /// A forward-only tape: ops evaluate but `backward` is rejected.
    pub fn inactive() -> Self {
        Self { nodes: Vec::new(), bindings: Vec::new(), active: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Inserts a leaf that accumulates gradients (used by tests and
    /// [`grad_check`](super::grad_check)).
    pub fn leaf_grad(&mut self, value: Tensor) -> Var {
        let rg = self.active;
        self.push(value, rg, Op::Leaf)
    }

    /// Binds a parameter: copies its current value onto the tape and records
    /// the association so [`Tape::accumulate_param_grads`] can push gradients
    /// back after a backward pass.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        let rg = self.active;
        let v = self.push(ps.value(id).clone(), rg, Op::Leaf);
        if self.active {
            self.bindings.push((id, v));
        }
        v
    }

    /// The forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears all gradients on the tape.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds every bound parameter's tape gradient into the param set.
    pub fn accumulate_param_grads(&self, ps: &mut ParamSet) {
        for &(id, v) in &self.bindings {
            if let Some(g) = self.nodes[v.0].grad.as_deref() {
                ps.accumulate_grad(id, g);
            }
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let (rg, op) = if self.active { (requires_grad, op) } else { (false, Op::Leaf) };
        self.nodes.push(Node { value, grad: None, requires_grad: rg, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = ta.matmul(tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Matmul(a, b)))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err(name, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(data, self.value(a).shape())?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, op))
    }

    /// Multiplies every element by a constant.
    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_vec(data, self.value(a).shape()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, rg, Op::ScalarMul(a, c))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(TensorError::Invalid { op: "concat", msg: "no inputs".into() });
        }
        let rank = self.value(inputs[0]).rank();
        if axis >= rank {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        for &v in inputs {
            let s = self.value(v).shape();
            let s0 = self.value(inputs[0]).shape();
            if s.len() != rank || (0..rank).any(|d| d != axis && s[d] != s0[d]) {
                return Err(self.shape_err("concat", inputs[0], v));
            }
        }
        let out = if rank == 1 {
            let mut data = Vec::new();
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            let n = data.len();
            Tensor::from_vec(data, &[n])?
        } else if axis == 0 {
            let cols = self.value(inputs[0]).shape()[1];
            let mut data = Vec::new();
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            let rows = data.len() / cols;
            Tensor::from_vec(data, &[rows, cols])?
        } else {
            let rows = self.value(inputs[0]).shape()[0];
            let total_cols: usize = inputs.iter().map(|&v| self.value(v).shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * total_cols);
            for i in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::from_vec(data, &[rows, total_cols])?
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, rg, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let rank = t.rank();
        if axis >= rank {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        if start + len > t.shape()[axis] || len == 0 {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!(
                    "range {}..{} invalid for axis extent {}",
                    start,
                    start + len,
                    t.shape()[axis]
                ),
            });
        }
        let out = if rank == 1 {
            Tensor::from_vec(t.data()[start..start + len].to_vec(), &[len])?
        } else if axis == 0 {
            let c = t.shape()[1];
            Tensor::from_vec(t.data()[start * c..(start + len) * c].to_vec(), &[len, c])?
        } else {
            let r = t.shape()[0];
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&t.row(i)[start..start + len]);
            }
            Tensor::from_vec(data, &[r, len])?
        };
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Slice { input, axis, start }))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank 2, got shape {:?}", t.shape()),
            });
        }
        let out = t.transpose();
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Transpose(input)))
    }

    /// Sum over all elements (`axis=None`, producing a scalar) or along one
    /// axis of a rank-2 tensor (`Some(0)` sums rows away, `Some(1)` columns).
    pub fn sum(&mut self, input: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.reduce_forward("sum", input, axis, false)?;
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Sum { input, axis }))
    }

    /// Arithmetic mean; axis semantics as for [`Tape::sum`].
    pub fn mean(&mut self, input: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.reduce_forward("mean", input, axis, true)?;
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Mean { input, axis }))
    }

    fn reduce_forward(
        &self,
        name: &'static str,
        input: Var,
        axis: Option<usize>,
        mean: bool,
    ) -> Result<Tensor> {
        let t = self.value(input);
        match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                Ok(Tensor::scalar(if mean { s / t.numel() as f64 } else { s }))
            }
            Some(ax) => {
                if t.rank() == 1 {
                    if ax != 0 {
                        return Err(TensorError::Invalid {
                            op: name,
                            msg: format!("axis {} out of range for rank 1", ax),
                        });
                    }
                    let s: f64 = t.data().iter().sum();
                    return Ok(Tensor::scalar(if mean { s / t.numel() as f64 } else { s }));
                }
                let (r, c) = (t.shape()[0], t.shape()[1]);
                match ax {
                    0 => {
                        let mut out = vec![0.0; c];
                        for i in 0..r {
                            for (o, &v) in out.iter_mut().zip(t.row(i)) {
                                *o += v;
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|v| *v /= r as f64);
                        }
                        Tensor::from_vec(out, &[c])
                    }
                    1 => {
                        let mut out = vec![0.0; r];
                        for i in 0..r {
                            out[i] = t.row(i).iter().sum();
                            if mean {
                                out[i] /= c as f64;
                            }
                        }
                        Tensor::from_vec(out, &[r])
                    }
                    _ => Err(TensorError::Invalid {
                        op: name,
                        msg: format!("axis {} out of range for rank 2", ax),
                    }),
                }
            }
        }
    }

    fn unary(
        &mut self,
        input: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Var {
        let data = self.value(input).data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(data, self.value(input).shape()).expect("same shape");
        let rg = self.rg(input);
        self.push(out, rg, op)
    }

    /// Elementwise absolute value (subgradient 0 at the kink).
    pub fn abs(&mut self, input: Var) -> Var {
        self.unary(input, f64::abs, Op::Abs(input))
    }

    /// Elementwise exponential.
    pub fn exp(&mut self, input: Var) -> Var {
        self.unary(input, f64::exp, Op::Exp(input))
    }

    /// Elementwise natural log; rejects non-positive inputs.
    pub fn log(&mut self, input: Var) -> Result<Var> {
        if let Some(&bad) = self.value(input).data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Invalid {
                op: "log",
                msg: format!("non-positive input {}", bad),
            });
        }
        Ok(self.unary(input, f64::ln, Op::Log(input)))
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, f64::tanh, Op::Tanh(input))
    }

    /// Elementwise logistic sigmoid.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(input))
    }

    /// Elementwise rectifier.
    pub fn relu(&mut self, input: Var) -> Var {
        self.unary(input, |x| x.max(0.0), Op::Relu(input))
    }

    /// Leaky rectifier with the given negative-side slope.
    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        self.unary(input, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(input, slope))
    }

    /// Elementwise square.
    pub fn square(&mut self, input: Var) -> Var {
        self.unary(input, |x| x * x, Op::Square(input))
    }

    /// Elementwise square root; rejects non-positive inputs (the gradient
    /// blows up at zero).
    pub fn sqrt(&mut self, input: Var) -> Result<Var> {
        if let Some(&bad) = self.value(input).data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Invalid {
                op: "sqrt",
                msg: format!("non-positive input {}", bad),
            });
        }
        Ok(self.unary(input, f64::sqrt, Op::Sqrt(input)))
    }

    /// Numerically stable softmax along `axis` (per row for `axis=1`).
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let t = self.value(input);
        let rank = t.rank();
        if axis >= rank {
            return Err(TensorError::Invalid {
                op: "softmax",
                msg: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = t.clone();
        // Treat rank-1 input as a single row; axis 0 on rank 2 works on columns.
        let per_row = rank == 1 || axis == 1;
        if per_row {
            for i in 0..r {
                softmax_slice(&mut out.data_mut()[i * c..(i + 1) * c], 1);
            }
        } else {
            for j in 0..c {
                softmax_slice(&mut out.data_mut()[j..], c);
            }
        }
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Softmax { input, axis }))
    }

    /// Selects rows of a rank-2 tensor by index; duplicates are allowed and
    /// accumulate gradient.
    pub fn gather(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("expected rank 2, got shape {:?}", t.shape()),
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("row index {} out of range for {} rows", bad, r),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(data, &[rows.len(), c])?;
        let rg = self.rg(input);
        Ok(self.push(out, rg, Op::Gather { input, rows: rows.to_vec() }))
    }

    /// Adds a length-`c` bias vector to every row of an `r x c` tensor.
    pub fn broadcast_add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (t, b) = (self.value(input), self.value(bias));
        if t.rank() != 2 || b.rank() != 1 || t.shape()[1] != b.shape()[0] {
            return Err(self.shape_err("broadcast_add_bias", input, bias));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = t.clone();
        for i in 0..r {
            for (o, &bv) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(out, rg, Op::BroadcastAddBias(input, bias)))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Runs the reverse pass from a scalar loss, accumulating gradients into
    /// every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.active {
            return Err(TensorError::InactiveTape);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().expect("checked above");
            self.step_backward(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Merge into persistent node gradients (accumulating across calls).
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn step_backward(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let nodes = &self.nodes;
        let x_of = |v: Var| nodes[v.0].value.data();
        let out = &nodes[idx].value;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(grads, nodes, *a, &mut |da| {
                    // dA += g · Bᵀ
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let brow = &tb.data()[l * n..(l + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            da[i * k + l] += dot;
                        }
                    }
                });
                acc(grads, nodes, *b, &mut |db| {
                    // dB += Aᵀ · g
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let av = ta.data()[i * k + l];
                            for (d, &gv) in db[l * n..(l + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(grads, nodes, *a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
                acc(grads, nodes, *b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
            }
            Op::Sub(a, b) => {
                acc(grads, nodes, *a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
                acc(grads, nodes, *b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (x_of(*a), x_of(*b));
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut().zip(g.iter().zip(xb)).for_each(|(d, (&gv, &y))| *d += gv * y)
                });
                acc(grads, nodes, *b, &mut |db| {
                    db.iter_mut().zip(g.iter().zip(xa)).for_each(|(d, (&gv, &x))| *d += gv * x)
                });
            }
            Op::ScalarMul(a, c) => {
                let c = *c;
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += c * gv)
                });
            }
            Op::Concat { inputs, axis } => {
                if out.rank() == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = nodes[v.0].value.numel();
                        acc(grads, nodes, v, &mut |dv| {
                            dv.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, &gv)| *d += gv)
                        });
                        offset += n;
                    }
                } else {
                    let rows = out.shape()[0];
                    let total_cols = out.shape()[1];
                    let mut col0 = 0;
                    for &v in inputs {
                        let c = nodes[v.0].value.shape()[1];
                        acc(grads, nodes, v, &mut |dv| {
                            for i in 0..rows {
                                let src = &g[i * total_cols + col0..i * total_cols + col0 + c];
                                dv[i * c..(i + 1) * c]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, &gv)| *d += gv);
                            }
                        });
                        col0 += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let t = &nodes[input.0].value;
                if t.rank() == 1 {
                    let start = *start;
                    acc(grads, nodes, *input, &mut |dv| {
                        dv[start..start + g.len()].iter_mut().zip(g).for_each(|(d, &gv)| *d += gv)
                    });
                } else if *axis == 0 {
                    let c = t.shape()[1];
                    let start = *start;
                    acc(grads, nodes, *input, &mut |dv| {
                        dv[start * c..start * c + g.len()]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, &gv)| *d += gv)
                    });
                } else {
                    let (r, c) = (t.shape()[0], t.shape()[1]);
                    let len = out.shape()[1];
                    let start = *start;
                    acc(grads, nodes, *input, &mut |dv| {
                        for i in 0..r {
                            dv[i * c + start..i * c + start + len]
                                .iter_mut()
                                .zip(&g[i * len..(i + 1) * len])
                                .for_each(|(d, &gv)| *d += gv);
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                acc(grads, nodes, *a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let t = &nodes[input.0].value;
                let (r, c) = (t.rows(), t.cols());
                let mean = matches!(nodes[idx].op, Op::Mean { .. });
                let per_axis = if t.rank() == 2 { *axis } else { None };
                let scale = if mean {
                    match per_axis {
                        None => 1.0 / t.numel() as f64,
                        Some(0) => 1.0 / r as f64,
                        Some(_) => 1.0 / c as f64,
                    }
                } else {
                    1.0
                };
                acc(grads, nodes, *input, &mut |dv| match per_axis {
                    None => dv.iter_mut().for_each(|d| *d += scale * g[0]),
                    Some(0) => {
                        for i in 0..r {
                            dv[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(g)
                                .for_each(|(d, &gv)| *d += scale * gv);
                        }
                    }
                    Some(_) => {
                        for i in 0..r {
                            dv[i * c..(i + 1) * c].iter_mut().for_each(|d| *d += scale * g[i]);
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let x = x_of(*a);
                acc(grads, nodes, *a, &mut |da| {
                    for (d, (&gv, &xv)) in da.iter_mut().zip(g.iter().zip(x)) {
                        *d += gv * if xv > 0.0 { 1.0 } else if xv < 0.0 { -1.0 } else { 0.0 };
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut().zip(g.iter().zip(y)).for_each(|(d, (&gv, &yv))| *d += gv * yv)
                });
            }
            Op::Log(a) => {
                let x = x_of(*a);
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut().zip(g.iter().zip(x)).for_each(|(d, (&gv, &xv))| *d += gv / xv)
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (&gv, &yv))| *d += gv * (1.0 - yv * yv))
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (&gv, &yv))| *d += gv * yv * (1.0 - yv))
                });
            }
            Op::Relu(a) => {
                let x = x_of(*a);
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(d, (&gv, &xv))| *d += if xv > 0.0 { gv } else { 0.0 })
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = x_of(*a);
                let slope = *slope;
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(d, (&gv, &xv))| *d += gv * if xv > 0.0 { 1.0 } else { slope })
                });
            }
            Op::Softmax { input, axis } => {
                let y = out.data();
                let (r, c) = (out.rows(), out.cols());
                let per_row = out.rank() == 1 || *axis == 1;
                acc(grads, nodes, *input, &mut |dv| {
                    if per_row {
                        for i in 0..r {
                            let ys = &y[i * c..(i + 1) * c];
                            let gs = &g[i * c..(i + 1) * c];
                            let dot: f64 = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                            for ((d, &yv), &gv) in
                                dv[i * c..(i + 1) * c].iter_mut().zip(ys).zip(gs)
                            {
                                *d += yv * (gv - dot);
                            }
                        }
                    } else {
                        for j in 0..c {
                            let mut dot = 0.0;
                            for i in 0..r {
                                dot += y[i * c + j] * g[i * c + j];
                            }
                            for i in 0..r {
                                dv[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                            }
                        }
                    }
                });
            }
            Op::Square(a) => {
                let x = x_of(*a);
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(d, (&gv, &xv))| *d += gv * 2.0 * xv)
                });
            }
            Op::Sqrt(a) => {
                let y = out.data();
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (&gv, &yv))| *d += gv / (2.0 * yv))
                });
            }
            Op::Gather { input, rows } => {
                let c = out.shape()[1];
                acc(grads, nodes, *input, &mut |dv| {
                    for (i, &src) in rows.iter().enumerate() {
                        dv[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(d, &gv)| *d += gv);
                    }
                });
            }
            Op::BroadcastAddBias(a, b) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                acc(grads, nodes, *a, &mut |da| {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv)
                });
                acc(grads, nodes, *b, &mut |db| {
                    for i in 0..r {
                        db.iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(d, &gv)| *d += gv);
                    }
                });
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// In-place stable softmax over a strided slice (`stride 1` = contiguous row).
fn softmax_slice(data: &mut [f64], stride: usize) {
    let mut max = f64::NEG_INFINITY;
    let mut i = 0;
    while i < data.len() {
        max = max.max(data[i]);
        i += stride;
    }
    let mut sum = 0.0;
    i = 0;
    while i < data.len() {
        data[i] = (data[i] - max).exp();
        sum += data[i];
        i += stride;
    }
    i = 0;
    while i < data.len() {
        data[i] /= sum;
        i += stride;
    }
}
