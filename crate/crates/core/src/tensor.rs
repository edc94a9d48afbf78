//! Dense tensors and a tape-based reverse-mode autodiff graph.
//!
//! A [`Graph`] records operations in creation order, so node indices are a
//! topological order and backward is a single reverse sweep. Leaf gradients
//! accumulate across `backward` calls until [`Graph::zero_grad`] is called.
//!
//! Broadcasting is limited to scalar-vs-tensor in binary ops; everything else
//! must be reshaped explicitly by the caller.

use crate::error::{Error, Result};

/// Row-major dense array of `f64`. An empty shape denotes a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }
}

/// Plain (non-recorded) matrix product of row-major `m×k` and `k×n` buffers.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Exp,
    Log,
    Tanh,
    Relu,
    Negate,
    Sqrt,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
    /// `max(x, floor)`; gradient is zero where the floor is active.
    ClampMin(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    Reshape(Var),
    Transpose(Var),
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reduce {
        kind: ReduceOp,
        input: Var,
        /// Output slot of every input element.
        slot: Vec<usize>,
        /// For max: winning input index per output slot.
        argmax: Vec<usize>,
        group: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    last_visits: usize,
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

    /// Number of nodes processed by the most recent `backward`.
    pub fn last_backward_visits(&self) -> usize {
        self.last_visits
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, rg: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(value, op, rg))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = if ta.shape == tb.shape || tb.is_scalar() {
            ta.shape.clone()
        } else if ta.is_scalar() {
            tb.shape.clone()
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        };
        let n = shape.iter().product::<usize>();
        let at = |i: usize| {
            if ta.is_scalar() {
                ta.data[0]
            } else {
                ta.data[i]
            }
        };
        let bt = |i: usize| {
            if tb.is_scalar() {
                tb.data[0]
            } else {
                tb.data[i]
            }
        };
        if kind == BinaryOp::Div && (0..tb.numel()).any(|i| tb.data[i] == 0.0) {
            return Err(Error::Domain {
                op: name,
                detail: "division by zero".into(),
            });
        }
        let data: Vec<f64> = (0..n)
            .map(|i| match kind {
                BinaryOp::Add => at(i) + bt(i),
                BinaryOp::Sub => at(i) - bt(i),
                BinaryOp::Mul => at(i) * bt(i),
                BinaryOp::Div => at(i) / bt(i),
            })
            .collect();
        let rg = self.rg(&[a, b]);
        self.push_checked(name, Tensor { shape, data }, Op::Binary(kind, a, b), rg)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Result<Var> {
        let name = match kind {
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Relu => "relu",
            UnaryOp::Negate => "negate",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Affine { .. } => "affine",
            UnaryOp::ClampMin(_) => "clamp_min",
        };
        let ta = &self.nodes[a.0].value;
        match kind {
            UnaryOp::Log if ta.data.iter().any(|&v| v <= 0.0) => {
                return Err(Error::Domain {
                    op: name,
                    detail: "log of a nonpositive value".into(),
                })
            }
            UnaryOp::Sqrt if ta.data.iter().any(|&v| v < 0.0) => {
                return Err(Error::Domain {
                    op: name,
                    detail: "sqrt of a negative value".into(),
                })
            }
            _ => {}
        }
        let out = ta.map(|x| match kind {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Negate => -x,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Affine { scale, shift } => scale * x + shift,
            UnaryOp::ClampMin(lo) => x.max(lo),
        });
        let rg = self.rg(&[a]);
        self.push_checked(name, out, Op::Unary(kind, a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Negate, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(UnaryOp::Affine { scale, shift }, a)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary(UnaryOp::ClampMin(floor), a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let data = matmul_raw(&ta.data, &tb.data, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push_checked(
            "matmul",
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[a.0].value.reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose needs a matrix, got shape {:?}",
                ta.shape
            )));
        }
        let (r, c) = (ta.shape[0], ta.shape[1]);
        let t = Tensor {
            shape: vec![c, r],
            data: transpose_raw(&ta.data, r, c),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 || len == 0 || start + len > ta.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{} of shape {:?}",
                start + len,
                ta.shape
            )));
        }
        let c = ta.shape[1];
        let t = Tensor {
            shape: vec![len, c],
            data: ta.data[start * c..(start + len) * c].to_vec(),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SliceRows { input: a, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let cols = self.nodes[first.0].value.shape.get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape.len() != 2 || t.shape[1] != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.nodes[first.0].value.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Reduce over `axes`; reduced axes are dropped from the output shape.
    pub fn reduce(&mut self, kind: ReduceOp, a: Var, axes: &[usize]) -> Result<Var> {
        if axes.is_empty() {
            return Err(Error::EmptyReduction);
        }
        let ta = &self.nodes[a.0].value;
        let rank = ta.shape.len().max(1);
        let shape = if ta.shape.is_empty() {
            vec![1]
        } else {
            ta.shape.clone()
        };
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(Error::InvalidAxis { axis: ax, rank });
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|&d| !reduced[d])
            .map(|d| shape[d])
            .collect();
        let out_n: usize = out_shape.iter().product();
        let group = ta.numel() / out_n;

        // out-slot of each input element via mixed-radix walk
        let mut slot = vec![0usize; ta.numel()];
        let mut out_strides = vec![0usize; rank];
        let mut s = 1;
        for d in (0..rank).rev() {
            if !reduced[d] {
                out_strides[d] = s;
                s *= shape[d];
            }
        }
        let mut idx = vec![0usize; rank];
        for flat in slot.iter_mut() {
            *flat = (0..rank).map(|d| idx[d] * out_strides[d]).sum();
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }

        let mut out = vec![0.0; out_n];
        let mut argmax = Vec::new();
        match kind {
            ReduceOp::Sum | ReduceOp::Mean => {
                for (i, &o) in slot.iter().enumerate() {
                    out[o] += ta.data[i];
                }
                if kind == ReduceOp::Mean {
                    out.iter_mut().for_each(|v| *v /= group as f64);
                }
            }
            ReduceOp::Max => {
                argmax = vec![usize::MAX; out_n];
                for (i, &o) in slot.iter().enumerate() {
                    // strict comparison keeps the first index on ties
                    if argmax[o] == usize::MAX || ta.data[i] > out[o] {
                        out[o] = ta.data[i];
                        argmax[o] = i;
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        let value = Tensor {
            shape: out_shape,
            data: out,
        };
        self.push_checked(
            "reduce",
            value,
            Op::Reduce {
                kind,
                input: a,
                slot,
                argmax,
                group,
            },
            rg,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len().max(1);
        self.reduce(ReduceOp::Sum, a, &(0..rank).collect::<Vec<_>>())
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len().max(1);
        self.reduce(ReduceOp::Mean, a, &(0..rank).collect::<Vec<_>>())
    }

    /// Reverse sweep from a scalar output. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_val = &self.nodes[output.0].value;
        if !out_val.is_scalar() {
            return Err(Error::NonScalar(out_val.shape.clone()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.leaf_grads[i].is_none() {
                self.leaf_grads[i] = Some(Tensor::zeros(&node.value.shape));
            }
        }
        self.last_visits = 0;
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.last_visits += 1;
            match &node.op {
                Op::Leaf => {
                    let acc = self.leaf_grads[i]
                        .as_mut()
                        .expect("leaf grads initialized above");
                    acc.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                op => {
                    for (input, contrib) in self.local_grads(op, &node.value, &g) {
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(contrib),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (val(a), val(b));
                let at = |i: usize| {
                    if ta.is_scalar() {
                        ta.data[0]
                    } else {
                        ta.data[i]
                    }
                };
                let bt = |i: usize| {
                    if tb.is_scalar() {
                        tb.data[0]
                    } else {
                        tb.data[i]
                    }
                };
                let n = g.len();
                let (ga, gb): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| match kind {
                        BinaryOp::Add => (g[i], g[i]),
                        BinaryOp::Sub => (g[i], -g[i]),
                        BinaryOp::Mul => (g[i] * bt(i), g[i] * at(i)),
                        BinaryOp::Div => (g[i] / bt(i), -g[i] * at(i) / (bt(i) * bt(i))),
                    })
                    .unzip();
                let fold = |t: &Tensor, full: Vec<f64>| {
                    if t.numel() == n {
                        full
                    } else {
                        vec![full.iter().sum()]
                    }
                };
                vec![(*a, fold(ta, ga)), (*b, fold(tb, gb))]
            }
            Op::Unary(kind, a) => {
                let x = &val(a).data;
                let y = &out.data;
                let d: Vec<f64> = (0..g.len())
                    .map(|i| {
                        g[i] * match *kind {
                            UnaryOp::Exp => y[i],
                            UnaryOp::Log => 1.0 / x[i],
                            UnaryOp::Tanh => 1.0 - y[i] * y[i],
                            UnaryOp::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Negate => -1.0,
                            UnaryOp::Sqrt => 0.5 / y[i],
                            UnaryOp::Affine { scale, .. } => scale,
                            UnaryOp::ClampMin(lo) => {
                                if x[i] > lo {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                vec![(*a, d)]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                let bt = transpose_raw(&tb.data, k, n);
                let at = transpose_raw(&ta.data, m, k);
                vec![
                    (*a, matmul_raw(g, &bt, m, n, k)),
                    (*b, matmul_raw(&at, g, k, m, n)),
                ]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Transpose(a) => {
                let (r, c) = (out.shape[0], out.shape[1]);
                vec![(*a, transpose_raw(g, r, c))]
            }
            Op::SliceRows { input, start } => {
                let t = val(input);
                let c = t.shape[1];
                let mut d = vec![0.0; t.numel()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                vec![(*input, d)]
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = val(p).numel();
                        let piece = g[off..off + n].to_vec();
                        off += n;
                        (*p, piece)
                    })
                    .collect()
            }
            Op::Reduce {
                kind,
                input,
                slot,
                argmax,
                group,
            } => {
                let d = match kind {
                    ReduceOp::Sum => slot.iter().map(|&o| g[o]).collect(),
                    ReduceOp::Mean => slot.iter().map(|&o| g[o] / *group as f64).collect(),
                    ReduceOp::Max => {
                        let mut d = vec![0.0; slot.len()];
                        for (o, &i) in argmax.iter().enumerate() {
                            d[i] += g[o];
                        }
                        d
                    }
                };
                vec![(*input, d)]
            }
        }
    }
}
