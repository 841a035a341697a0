//! The computation tape and every differentiable operation.
//!
//! A [`Tape`] is an append-only list of nodes. Each operation computes its
//! result eagerly and, when at least one operand is attached to the tape,
//! records a node holding whatever the backward rule needs. Operations on
//! pure constants record nothing. [`Tape::backward`] walks the nodes in
//! reverse creation order exactly once.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::{NodeId, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Tanh,
    Softplus,
    Exp,
    Log,
    Negate,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone)]
struct Saved {
    id: Option<usize>,
    values: Arc<Vec<f64>>,
}

enum Op {
    Leaf,
    Add(Option<usize>, Option<usize>),
    Sub(Option<usize>, Option<usize>),
    Mul(Saved, Saved),
    Div(Saved, Saved),
    Scale(Option<usize>, f64),
    Shift(Option<usize>),
    Unary {
        kind: UnaryKind,
        input: Saved,
        output: Arc<Vec<f64>>,
    },
    MatMul {
        a: Saved,
        b: Saved,
        r: usize,
        k: usize,
        c: usize,
    },
    Transpose {
        input: Option<usize>,
        rows: usize,
        cols: usize,
    },
    AddBias {
        input: Option<usize>,
        bias: Option<usize>,
        cols: usize,
    },
    RepeatRows {
        input: Option<usize>,
        cols: usize,
    },
    Reduce {
        kind: ReduceKind,
        input: Option<usize>,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Softmax {
        input: Option<usize>,
        output: Arc<Vec<f64>>,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Conv1d {
        signal: Saved,
        weights: Saved,
        geometry: ConvGeometry,
    },
    Concat {
        parts: Vec<(Option<usize>, usize)>,
        outer: usize,
        inner: usize,
    },
    Reshape(Option<usize>),
}

struct Node {
    op: Op,
    len: usize,
    shape: Vec<usize>,
}

/// Append-only record of a forward pass.
///
/// A tape is confined to one thread; build a fresh one per forward pass.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], keyed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf tensor, `None` if the leaf does
    /// not belong to this tape or did not influence the loss.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        let g = self.grads.get(node.index)?.as_ref()?;
        Tensor::new(self.shapes[node.index].clone(), g.clone()).ok()
    }

    /// Like [`Gradients::get`] but returns zeros when no gradient reached `t`.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        self.get(t).unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    /// All leaf gradients as `(node_id, gradient)` pairs in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Tensor)> + '_ {
        self.grads.iter().enumerate().filter_map(move |(i, g)| {
            let g = g.as_ref()?;
            let t = Tensor::new(self.shapes[i].clone(), g.clone()).ok()?;
            Some((NodeId { tape: self.tape, index: i }, t))
        })
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: Option<usize>, len: usize) -> Option<&mut Vec<f64>> {
    let id = id?;
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op, shape: Vec<usize>, values: Arc<Vec<f64>>) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            len: values.len(),
            shape: shape.clone(),
        });
        Tensor::from_parts(shape, values, Some(NodeId { tape: self.id, index }))
    }

    fn id_of(&self, t: &Tensor) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(n) if n.tape == self.id => Ok(Some(n.index)),
            Some(_) => Err(TensorError::Contract(
                "tensor belongs to a different tape".into(),
            )),
        }
    }

    fn saved(&self, t: &Tensor) -> Result<Saved> {
        Ok(Saved {
            id: self.id_of(t)?,
            values: t.shared_values(),
        })
    }

    fn finish(&self, op: Op, tracked: bool, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let values = Arc::new(values);
        if tracked {
            self.push(op, shape, values)
        } else {
            Tensor::from_parts(shape, values, None)
        }
    }

    /// Records `t` as a differentiable leaf (a parameter or input).
    pub fn var(&self, t: &Tensor) -> Tensor {
        self.push(Op::Leaf, t.shape().to_vec(), t.shared_values())
    }

    fn binary(
        &self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<f64>, Option<usize>, Option<usize>)> {
        if a.shape() != b.shape() {
            return Err(shape_err(name, a, b));
        }
        let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        Ok((values, self.id_of(a)?, self.id_of(b)?))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (v, ia, ib) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.finish(Op::Add(ia, ib), ia.is_some() || ib.is_some(), a.shape().to_vec(), v))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (v, ia, ib) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.finish(Op::Sub(ia, ib), ia.is_some() || ib.is_some(), a.shape().to_vec(), v))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (v, ia, ib) = self.binary("mul", a, b, |x, y| x * y)?;
        let op = Op::Mul(self.saved(a)?, self.saved(b)?);
        Ok(self.finish(op, ia.is_some() || ib.is_some(), a.shape().to_vec(), v))
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if b.values().iter().any(|&y| y == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let (v, ia, ib) = self.binary("div", a, b, |x, y| x / y)?;
        let op = Op::Div(self.saved(a)?, self.saved(b)?);
        Ok(self.finish(op, ia.is_some() || ib.is_some(), a.shape().to_vec(), v))
    }

    /// Multiplies every element by the scalar `k`.
    pub fn scale(&self, a: &Tensor, k: f64) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let v = a.values().iter().map(|x| x * k).collect();
        Ok(self.finish(Op::Scale(ia, k), ia.is_some(), a.shape().to_vec(), v))
    }

    /// Adds the scalar `k` to every element.
    pub fn add_scalar(&self, a: &Tensor, k: f64) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let v = a.values().iter().map(|x| x + k).collect();
        Ok(self.finish(Op::Shift(ia), ia.is_some(), a.shape().to_vec(), v))
    }

    pub fn unary(&self, kind: UnaryKind, a: &Tensor) -> Result<Tensor> {
        let input = self.saved(a)?;
        let x = a.values();
        let out: Vec<f64> = match kind {
            UnaryKind::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            UnaryKind::Tanh => x.iter().map(|&v| v.tanh()).collect(),
            UnaryKind::Softplus => x.iter().map(|&v| softplus(v)).collect(),
            UnaryKind::Exp => x.iter().map(|&v| v.exp()).collect(),
            UnaryKind::Log => {
                if let Some(bad) = x.iter().find(|&&v| !(v > 0.0)) {
                    return Err(TensorError::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                x.iter().map(|&v| v.ln()).collect()
            }
            UnaryKind::Negate => x.iter().map(|&v| -v).collect(),
            UnaryKind::Square => x.iter().map(|&v| v * v).collect(),
        };
        let tracked = input.id.is_some();
        let out = Arc::new(out);
        if !tracked {
            return Ok(Tensor::from_parts(a.shape().to_vec(), out, None));
        }
        let op = Op::Unary {
            kind,
            input,
            output: Arc::clone(&out),
        };
        Ok(self.push(op, a.shape().to_vec(), out))
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn softplus(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Negate, a)
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(UnaryKind::Square, a)
    }

    /// Matrix product of `[r×k]` and `[k×c]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", a, b));
        }
        let (r, k, c) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let v = kernels::matmul(a.values(), b.values(), r, k, c);
        let (sa, sb) = (self.saved(a)?, self.saved(b)?);
        let tracked = sa.id.is_some() || sb.id.is_some();
        Ok(self.finish(Op::MatMul { a: sa, b: sb, r, k, c }, tracked, vec![r, c], v))
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                left: a.shape().to_vec(),
                right: vec![],
            });
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let x = a.values();
        let mut v = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                v[j * rows + i] = x[i * cols + j];
            }
        }
        let input = self.id_of(a)?;
        Ok(self.finish(Op::Transpose { input, rows, cols }, input.is_some(), vec![cols, rows], v))
    }

    /// Adds a bias vector (`[c]` or `[1×c]`) to every row of `a[r×c]`.
    pub fn add_bias(&self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || bias.len() != a.shape()[1] || bias.rank() > 2 {
            return Err(shape_err("add_bias", a, bias));
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let mut v = a.to_vec();
        for row in v.chunks_mut(cols) {
            for (x, b) in row.iter_mut().zip(bias.values()) {
                *x += b;
            }
        }
        let (input, b) = (self.id_of(a)?, self.id_of(bias)?);
        let op = Op::AddBias { input, bias: b, cols };
        Ok(self.finish(op, input.is_some() || b.is_some(), vec![rows, cols], v))
    }

    /// Stacks a single row (`[c]` or `[1×c]`) `rows` times into `[rows×c]`.
    pub fn repeat_rows(&self, a: &Tensor, rows: usize) -> Result<Tensor> {
        if a.rank() == 0 || a.rank() > 2 || (a.rank() == 2 && a.shape()[0] != 1) {
            return Err(TensorError::Shape {
                op: "repeat_rows",
                left: a.shape().to_vec(),
                right: vec![rows],
            });
        }
        let cols = a.len();
        let mut v = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            v.extend_from_slice(a.values());
        }
        let input = self.id_of(a)?;
        Ok(self.finish(Op::RepeatRows { input, cols }, input.is_some(), vec![rows, cols], v))
    }

    /// Sum or mean over one axis (removed from the shape) or over everything.
    pub fn reduce(&self, kind: ReduceKind, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        let (outer, n, inner, shape) = match axis {
            None => (1, a.len(), 1, Vec::new()),
            Some(ax) => {
                if ax >= a.rank() {
                    return Err(TensorError::Axis {
                        op: "reduce",
                        axis: ax,
                        rank: a.rank(),
                    });
                }
                let (o, n, i) = kernels::axis_split(a.shape(), ax);
                let mut shape = a.shape().to_vec();
                shape.remove(ax);
                (o, n, i, shape)
            }
        };
        let x = a.values();
        let mut v = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..][..inner];
                for (dst, s) in v[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        if kind == ReduceKind::Mean && n > 0 {
            let inv = 1.0 / n as f64;
            v.iter_mut().for_each(|x| *x *= inv);
        }
        let input = self.id_of(a)?;
        let op = Op::Reduce { kind, input, outer, n, inner };
        Ok(self.finish(op, input.is_some(), shape, v))
    }

    pub fn sum(&self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, a, axis)
    }

    pub fn mean(&self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, a, axis)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: a.rank(),
            });
        }
        let (outer, n, inner) = kernels::axis_split(a.shape(), axis);
        let out = Arc::new(kernels::softmax(a.values(), outer, n, inner));
        let input = self.id_of(a)?;
        if input.is_none() {
            return Ok(Tensor::from_parts(a.shape().to_vec(), out, None));
        }
        let op = Op::Softmax {
            input,
            output: Arc::clone(&out),
            outer,
            n,
            inner,
        };
        Ok(self.push(op, a.shape().to_vec(), out))
    }

    /// Stride-1 cross-correlation with zero "same" padding and no bias.
    ///
    /// `signal` is `[channels_in × length]` or `[batch × channels_in × length]`;
    /// `weights` is `[channels_in × channels_out × kernel]` with an odd kernel.
    pub fn conv1d(&self, signal: &Tensor, weights: &Tensor) -> Result<Tensor> {
        if weights.rank() != 3 {
            return Err(shape_err("conv1d", signal, weights));
        }
        let (cin, cout, kernel) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
        if kernel % 2 == 0 {
            return Err(TensorError::Unsupported {
                op: "conv1d",
                detail: format!("even kernel size {kernel}"),
            });
        }
        let (batch, length, batched) = match signal.shape() {
            [c, l] if *c == cin => (1, *l, false),
            [b, c, l] if *c == cin => (*b, *l, true),
            _ => return Err(shape_err("conv1d", signal, weights)),
        };
        let geometry = ConvGeometry {
            batch,
            channels_in: cin,
            channels_out: cout,
            kernel,
            length,
        };
        let v = kernels::conv1d(signal.values(), weights.values(), geometry);
        let shape = if batched { vec![batch, cout, length] } else { vec![cout, length] };
        let (s, w) = (self.saved(signal)?, self.saved(weights)?);
        let tracked = s.id.is_some() || w.id.is_some();
        Ok(self.finish(Op::Conv1d { signal: s, weights: w, geometry }, tracked, shape, v))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        if axis >= first.rank() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: first.rank(),
            });
        }
        for p in parts {
            let same_rank = p.rank() == first.rank();
            let agree = same_rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(shape_err("concat", first, p));
            }
        }
        let (outer, _, inner) = kernels::axis_split(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut v = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                v.extend_from_slice(&p.values()[o * block..(o + 1) * block]);
            }
        }
        let mut ids = Vec::with_capacity(parts.len());
        for p in parts {
            ids.push((self.id_of(p)?, p.shape()[axis]));
        }
        let tracked = ids.iter().any(|(id, _)| id.is_some());
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(self.finish(Op::Concat { parts: ids, outer, inner }, tracked, shape, v))
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != a.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: a.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let input = self.id_of(a)?;
        if input.is_none() {
            return Ok(Tensor::from_parts(shape.to_vec(), a.shared_values(), None));
        }
        Ok(self.push(Op::Reshape(input), shape.to_vec(), a.shared_values()))
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Every recorded node up to the loss is visited once in reverse order.
    /// The tape is left untouched, so calling this twice gives identical
    /// gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.shape.clone()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let Some(root) = self.id_of(loss)? else {
            return Ok(Gradients { tape: self.id, grads, shapes });
        };
        grads[root] = Some(vec![1.0]);
        let len_of = |id: usize| nodes[id].len;

        for i in (0..=root).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    for (id, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if let Some(acc) = accumulate(&mut grads, id, g.len()) {
                            kernels::axpy(acc, sign, &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (id, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if let Some(acc) = accumulate(&mut grads, id, g.len()) {
                            kernels::axpy(acc, sign, &g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(acc) = accumulate(&mut grads, a.id, g.len()) {
                        for ((s, gv), bv) in acc.iter_mut().zip(&g).zip(b.values.iter()) {
                            *s += gv * bv;
                        }
                    }
                    if let Some(acc) = accumulate(&mut grads, b.id, g.len()) {
                        for ((s, gv), av) in acc.iter_mut().zip(&g).zip(a.values.iter()) {
                            *s += gv * av;
                        }
                    }
                }
                Op::Div(a, b) => {
                    if let Some(acc) = accumulate(&mut grads, a.id, g.len()) {
                        for ((s, gv), bv) in acc.iter_mut().zip(&g).zip(b.values.iter()) {
                            *s += gv / bv;
                        }
                    }
                    if let Some(acc) = accumulate(&mut grads, b.id, g.len()) {
                        for (((s, gv), av), bv) in
                            acc.iter_mut().zip(&g).zip(a.values.iter()).zip(b.values.iter())
                        {
                            *s -= gv * av / (bv * bv);
                        }
                    }
                }
                Op::Scale(a, k) => {
                    if let Some(acc) = accumulate(&mut grads, *a, g.len()) {
                        kernels::axpy(acc, *k, &g);
                    }
                }
                Op::Shift(a) => {
                    if let Some(acc) = accumulate(&mut grads, *a, g.len()) {
                        kernels::axpy(acc, 1.0, &g);
                    }
                }
                Op::Unary { kind, input, output } => {
                    if let Some(acc) = accumulate(&mut grads, input.id, g.len()) {
                        let x = input.values.iter();
                        let y = output.iter();
                        for (((s, gv), &xv), &yv) in acc.iter_mut().zip(&g).zip(x).zip(y) {
                            *s += gv * unary_derivative(*kind, xv, yv);
                        }
                    }
                }
                Op::MatMul { a, b, r, k, c } => {
                    if let Some(acc) = accumulate(&mut grads, a.id, r * k) {
                        kernels::matmul_grad_lhs(acc, &g, &b.values, *r, *k, *c);
                    }
                    if let Some(acc) = accumulate(&mut grads, b.id, k * c) {
                        kernels::matmul_grad_rhs(acc, &a.values, &g, *r, *k, *c);
                    }
                }
                Op::Transpose { input, rows, cols } => {
                    if let Some(acc) = accumulate(&mut grads, *input, rows * cols) {
                        for i in 0..*rows {
                            for j in 0..*cols {
                                acc[i * cols + j] += g[j * rows + i];
                            }
                        }
                    }
                }
                Op::AddBias { input, bias, cols } => {
                    if let Some(acc) = accumulate(&mut grads, *input, g.len()) {
                        kernels::axpy(acc, 1.0, &g);
                    }
                    if let Some(acc) = accumulate(&mut grads, *bias, *cols) {
                        for row in g.chunks(*cols) {
                            kernels::axpy(acc, 1.0, row);
                        }
                    }
                }
                Op::RepeatRows { input, cols } => {
                    if let Some(acc) = accumulate(&mut grads, *input, *cols) {
                        for row in g.chunks(*cols) {
                            kernels::axpy(acc, 1.0, row);
                        }
                    }
                }
                Op::Reduce { kind, input, outer, n, inner } => {
                    if let Some(id) = input {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / *n as f64,
                        };
                        let acc = accumulate(&mut grads, Some(*id), len_of(*id)).unwrap();
                        for o in 0..*outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for j in 0..*n {
                                kernels::axpy(&mut acc[(o * n + j) * inner..][..*inner], scale, src);
                            }
                        }
                    }
                }
                Op::Softmax { input, output, outer, n, inner } => {
                    if let Some(acc) = accumulate(&mut grads, *input, g.len()) {
                        for o in 0..*outer {
                            for i in 0..*inner {
                                let idx = |j: usize| (o * n + j) * inner + i;
                                let dot: f64 = (0..*n).map(|j| g[idx(j)] * output[idx(j)]).sum();
                                for j in 0..*n {
                                    acc[idx(j)] += output[idx(j)] * (g[idx(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Conv1d { signal, weights, geometry } => {
                    let mut gs = signal.id.map(|id| grads[id].take().unwrap_or_else(|| vec![0.0; len_of(id)]));
                    let mut gw = weights.id.map(|id| grads[id].take().unwrap_or_else(|| vec![0.0; len_of(id)]));
                    kernels::conv1d_backward(
                        &signal.values,
                        &weights.values,
                        &g,
                        *geometry,
                        gs.as_deref_mut(),
                        gw.as_deref_mut(),
                    );
                    if let (Some(id), Some(v)) = (signal.id, gs) {
                        grads[id] = Some(v);
                    }
                    if let (Some(id), Some(v)) = (weights.id, gw) {
                        grads[id] = Some(v);
                    }
                }
                Op::Concat { parts, outer, inner } => {
                    let total: usize = parts.iter().map(|(_, e)| e).sum();
                    let mut offset = 0;
                    for (id, extent) in parts {
                        if let Some(id) = id {
                            let acc = accumulate(&mut grads, Some(*id), len_of(*id)).unwrap();
                            let block = extent * inner;
                            for o in 0..*outer {
                                let src = &g[(o * total + offset) * inner..][..block];
                                kernels::axpy(&mut acc[o * block..(o + 1) * block], 1.0, src);
                            }
                        }
                        offset += extent;
                    }
                }
                Op::Reshape(input) => {
                    if let Some(acc) = accumulate(&mut grads, *input, g.len()) {
                        kernels::axpy(acc, 1.0, &g);
                    }
                }
            }
        }

        // keep leaf gradients only
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads, shapes })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Negate => -1.0,
        UnaryKind::Square => 2.0 * x,
    }
}
