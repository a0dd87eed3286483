//! Reverse-mode automatic differentiation over a recorded op list.
//!
//! Every vector-Jacobian product is itself expressed with graph ops, so
//! gradients can be recorded (`create_graph = true`) and differentiated a
//! second time. With `create_graph = false` the backward pass runs with
//! recording disabled and the returned gradients are constants.

use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    /// Tensor times a one-element tensor.
    MulScalar(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    SumAll(Var),
    /// `[m, n] -> [n]`
    SumRows(Var),
    /// `[m, n] -> [m]`
    SumCols(Var),
    /// `[n] -> [m, n]`
    BroadcastRows(Var),
    /// `[m] -> [m, n]`
    BroadcastCols(Var),
    /// Row-wise softmax of a matrix.
    Softmax(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Recip(Var),
    /// Euclidean norm of all entries, producing a scalar.
    Norm(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MulScalar(..) => "mul_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::SumAll(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Softmax(..) => "softmax",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Recip(..) => "recip",
            Op::Norm(..) => "norm",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Const => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulScalar(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Concat(xs, _) => xs.clone(),
            Op::Slice { input, .. } => vec![*input],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::Softmax(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Norm(a) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A computation graph. Nodes are appended in evaluation order, so node
/// indices are a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Constant copy of `v`; gradients do not flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, TensorError> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { node, op: op.name() });
        }
        let requires_grad = self.recording && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Const };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(node))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(TensorError::Shape(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    fn vector_len(&self, v: Var, what: &str) -> Result<usize, TensorError> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(TensorError::Shape(format!("{what} expects a vector, got {s:?}"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    /// `a * s` where `s` holds exactly one value.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).numel() != 1 {
            return Err(TensorError::Shape(format!(
                "mul_scalar needs a one-element factor, got {:?}",
                self.shape(s)
            )));
        }
        let c = self.value(s).item();
        let v = self.value(a).map(|x| x * c);
        self.push(Op::MulScalar(a, s), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.matrix_dims(a, "transpose")?;
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(Op::Reshape(a), v)
    }

    /// Concatenation along `axis`. Vectors concatenate along axis 0;
    /// matrices along rows (0) or columns (1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
        let rank = self.value(first).rank();
        if rank == 0 || axis >= rank {
            return Err(TensorError::Shape(format!("concat axis {axis} on rank {rank}")));
        }
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == self.shape(first)[d]);
            if !ok {
                return Err(TensorError::Shape(format!(
                    "concat of {:?} with {:?}",
                    self.shape(first),
                    s
                )));
            }
        }
        let value = if rank == 1 || axis == 0 {
            let mut data = Vec::new();
            let mut extent = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                extent += self.shape(p)[axis];
            }
            let mut shape = self.shape(first).to_vec();
            shape[axis] = extent;
            Tensor::new(shape, data)?
        } else {
            let rows = self.shape(first)[0];
            let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::matrix(rows, cols, data)?
        };
        self.push(Op::Concat(parts.to_vec(), axis), value)
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Shape(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let src = self.value(a);
        let value = if shape.len() == 1 {
            Tensor::vector(src.data()[start..start + len].to_vec())
        } else if axis == 0 {
            let c = shape[1];
            Tensor::matrix(len, c, src.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(shape[0] * len);
            for i in 0..shape[0] {
                data.extend_from_slice(&src.row(i)[start..start + len]);
            }
            Tensor::matrix(shape[0], len, data)?
        };
        self.push(Op::Slice { input: a, axis, start }, value)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, TensorError> {
        let (_, n) = self.matrix_dims(a, "row")?;
        let r = self.slice(a, 0, i, 1)?;
        self.reshape(r, &[n])
    }

    /// Stack equal-length vectors into a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let mut reshaped = Vec::with_capacity(rows.len());
        for &r in rows {
            let n = self.vector_len(r, "stack")?;
            reshaped.push(self.reshape(r, &[1, n])?);
        }
        self.concat(&reshaped, 0)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims(a, "sum_rows")?;
        let src = self.value(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        self.push(Op::SumRows(a), Tensor::vector(out))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, _) = self.matrix_dims(a, "mean_rows")?;
        let s = self.sum_rows(a)?;
        self.scale(s, 1.0 / m as f64)
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, _) = self.matrix_dims(a, "sum_cols")?;
        let src = self.value(a);
        let out = (0..m).map(|i| src.row(i).iter().sum()).collect();
        self.push(Op::SumCols(a), Tensor::vector(out))
    }

    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var, TensorError> {
        let n = self.vector_len(a, "broadcast_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(src);
        }
        let v = Tensor::matrix(m, n, data)?;
        self.push(Op::BroadcastRows(a), v)
    }

    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var, TensorError> {
        let m = self.vector_len(a, "broadcast_cols")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * n);
        for &x in src {
            data.extend(std::iter::repeat_n(x, n));
        }
        let v = Tensor::matrix(m, n, data)?;
        self.push(Op::BroadcastCols(a), v)
    }

    /// Softmax along the last axis (row-wise for matrices).
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        match self.shape(a).to_vec().as_slice() {
            [n] => {
                let m = self.reshape(a, &[1, *n])?;
                let s = self.softmax(m)?;
                self.reshape(s, &[*n])
            }
            [_, _] => {
                let src = self.value(a);
                let mut out = src.clone();
                for i in 0..src.rows() {
                    let row = out.row_mut(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        z += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= z;
                    }
                }
                self.push(Op::Softmax(a), out)
            }
            s => Err(TensorError::Shape(format!("softmax of {s:?}"))),
        }
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a).map(f64::recip);
        self.push(Op::Recip(a), v)
    }

    /// L2 norm of all entries.
    pub fn norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(Op::Norm(a), v)
    }

    /// Inner product of two equal-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Cosine similarity of two equal-shape tensors. A zero-norm input is
    /// reported as an error.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "cosine")?;
        if self.value(a).norm() == 0.0 || self.value(b).norm() == 0.0 {
            return Err(TensorError::ZeroNorm);
        }
        let d = self.dot(a, b)?;
        let na = self.norm(a)?;
        let nb = self.norm(b)?;
        let den = self.mul(na, nb)?;
        let inv = self.recip(den)?;
        self.mul(d, inv)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims(x, "layer_norm")?;
        let inv_n = 1.0 / n as f64;
        let sums = self.sum_cols(x)?;
        let mean = self.scale(sums, inv_n)?;
        let mean = self.broadcast_cols(mean, n)?;
        let centered = self.sub(x, mean)?;
        let sq = self.mul(centered, centered)?;
        let var = self.sum_cols(sq)?;
        let var = self.scale(var, inv_n)?;
        let var = self.add_const(var, eps)?;
        let std = self.sqrt(var)?;
        let inv = self.recip(std)?;
        let inv = self.broadcast_cols(inv, n)?;
        let normed = self.mul(centered, inv)?;
        let g = self.broadcast_rows(gain, m)?;
        let b = self.broadcast_rows(bias, m)?;
        let scaled = self.mul(normed, g)?;
        self.add(scaled, b)
    }

    /// `x W + b` for a matrix `x`; `bias` is optional.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => {
                let (m, _) = self.matrix_dims(y, "linear")?;
                let b = self.broadcast_rows(b, m)?;
                self.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Multiply by a fixed mask (dropout or drop-path).
    pub fn mask(&mut self, a: Var, mask: Tensor) -> Result<Var, TensorError> {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    fn ones_like(&mut self, v: Var) -> Var {
        let shape = self.shape(v).to_vec();
        self.constant(Tensor::full(&shape, 1.0))
    }

    /// Accumulate `src` into the slot, adding if a gradient is already there.
    fn accumulate(&mut self, slot: &mut Option<Var>, src: Var) -> Result<(), TensorError> {
        *slot = Some(match *slot {
            Some(prev) => self.add(prev, src)?,
            None => src,
        });
        Ok(())
    }

    /// Vector-Jacobian product of node `node` with upstream gradient `g`,
    /// one entry per input (in `Op::inputs` order).
    fn vjp(&mut self, node: Var, g: Var) -> Result<Vec<Var>, TensorError> {
        let op = self.nodes[node.0].op.clone();
        Ok(match op {
            Op::Leaf | Op::Const => Vec::new(),
            Op::Add(..) => vec![g, g],
            Op::Sub(..) => vec![g, self.scale(g, -1.0)?],
            Op::Mul(a, b) => vec![self.mul(g, b)?, self.mul(g, a)?],
            Op::Scale(_, c) => vec![self.scale(g, c)?],
            Op::AddConst(_) => vec![g],
            Op::MulScalar(a, s) => {
                let ga = self.mul_scalar(g, s)?;
                let p = self.dot(g, a)?;
                let shape = self.shape(s).to_vec();
                vec![ga, self.reshape(p, &shape)?]
            }
            Op::MatMul(a, b) => {
                let bt = self.transpose(b)?;
                let at = self.transpose(a)?;
                vec![self.matmul(g, bt)?, self.matmul(at, g)?]
            }
            Op::Transpose(_) => vec![self.transpose(g)?],
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                vec![self.reshape(g, &shape)?]
            }
            Op::Concat(parts, axis) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(p)[axis];
                    out.push(self.slice(g, axis, offset, len)?);
                    offset += len;
                }
                out
            }
            Op::Slice { input, axis, start } => {
                let full = self.shape(input).to_vec();
                let len = self.shape(node)[axis];
                let mut pieces = Vec::with_capacity(3);
                for (extent, before) in [(start, true), (full[axis] - start - len, false)] {
                    if !before {
                        pieces.push(g);
                    }
                    if extent > 0 {
                        let mut s = full.clone();
                        s[axis] = extent;
                        pieces.push(self.constant(Tensor::zeros(&s)));
                    }
                }
                vec![self.concat(&pieces, axis)?]
            }
            Op::SumAll(a) => {
                let ones = self.ones_like(a);
                vec![self.mul_scalar(ones, g)?]
            }
            Op::SumRows(a) => {
                let m = self.shape(a)[0];
                vec![self.broadcast_rows(g, m)?]
            }
            Op::SumCols(a) => {
                let n = self.shape(a)[1];
                vec![self.broadcast_cols(g, n)?]
            }
            Op::BroadcastRows(_) => vec![self.sum_rows(g)?],
            Op::BroadcastCols(_) => vec![self.sum_cols(g)?],
            Op::Softmax(_) => {
                let n = self.shape(node)[1];
                let gy = self.mul(g, node)?;
                let s = self.sum_cols(gy)?;
                let s = self.broadcast_cols(s, n)?;
                let centered = self.sub(g, s)?;
                vec![self.mul(node, centered)?]
            }
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![self.mask(g, mask)?]
            }
            Op::Tanh(_) => {
                let sq = self.mul(node, node)?;
                let neg = self.scale(sq, -1.0)?;
                let d = self.add_const(neg, 1.0)?;
                vec![self.mul(g, d)?]
            }
            Op::Exp(_) => vec![self.mul(g, node)?],
            Op::Ln(a) => {
                let r = self.recip(a)?;
                vec![self.mul(g, r)?]
            }
            Op::Sqrt(_) => {
                let r = self.recip(node)?;
                let h = self.scale(r, 0.5)?;
                vec![self.mul(g, h)?]
            }
            Op::Recip(_) => {
                let sq = self.mul(node, node)?;
                let d = self.scale(sq, -1.0)?;
                vec![self.mul(g, d)?]
            }
            Op::Norm(a) => {
                if self.value(node).item() == 0.0 {
                    // subgradient 0 at the origin
                    let shape = self.shape(a).to_vec();
                    vec![self.constant(Tensor::zeros(&shape))]
                } else {
                    let r = self.recip(node)?;
                    let c = self.mul(g, r)?;
                    vec![self.mul_scalar(a, c)?]
                }
            }
        })
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`, which
    /// may be leaves or intermediate nodes. Nodes outside every
    /// `wrt -> loss` path are skipped; an unreachable target gets zeros.
    ///
    /// With `create_graph` the gradient computation is recorded so the
    /// results can be differentiated again; otherwise they are constants.
    pub fn grad(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let end = loss.0 + 1;
        let mut depends = vec![false; end];
        for w in wrt {
            if w.0 < end {
                depends[w.0] = true;
            }
        }
        for i in 0..end {
            if !depends[i] && self.nodes[i].op.inputs().iter().any(|v| depends[v.0]) {
                depends[i] = true;
            }
        }
        let mut needed = vec![false; end];
        needed[loss.0] = true;
        for i in (0..end).rev() {
            if needed[i] {
                for v in self.nodes[i].op.inputs() {
                    needed[v.0] = true;
                }
            }
        }

        let saved = self.recording;
        self.recording = create_graph;
        let result = self.propagate(loss, wrt, &depends, &needed);
        self.recording = saved;
        result
    }

    fn propagate(
        &mut self,
        loss: Var,
        wrt: &[Var],
        depends: &[bool],
        needed: &[bool],
    ) -> Result<Vec<Var>, TensorError> {
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; end];
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(self.constant(Tensor::full(&seed_shape, 1.0)));
        for i in (0..end).rev() {
            if !(depends[i] && needed[i]) {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let inputs = self.nodes[i].op.inputs();
            if inputs.iter().all(|v| !depends[v.0]) {
                continue;
            }
            let contributions = self.vjp(Var(i), g)?;
            for (input, c) in inputs.into_iter().zip(contributions) {
                if depends[input.0] {
                    let mut slot = grads[input.0];
                    self.accumulate(&mut slot, c)?;
                    grads[input.0] = slot;
                }
            }
        }
        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Gradient values of `loss` with respect to `wrt`, not recorded.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>, TensorError> {
        let vars = self.grad(loss, wrt, false)?;
        Ok(vars.into_iter().map(|v| self.value(v).clone()).collect())
    }

    /// `d loss / d p` for every trainable leaf `p`, in creation order.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<(Var, Tensor)>, TensorError> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        let grads = self.gradients(loss, &leaves)?;
        Ok(leaves.into_iter().zip(grads).collect())
    }
}
