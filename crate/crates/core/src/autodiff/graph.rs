use std::collections::HashMap;

use crate::autodiff::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc, ConvGeom};
use crate::autodiff::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[doc(hidden)]
    pub fn from_index_for_tests(i: usize) -> Var {
        Var(i)
    }
}

/// Operation tag, used for reporting and for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    Relu,
    Tanh,
    Abs,
    Conv1d,
    Conv2d,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    ReduceMean,
    Reshape,
    Frame,
    Stack,
    GatherRows,
    Detach,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: bool },
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a` has shape `[.., n]`, `mask` has shape `[..]`; broadcast over the
    /// trailing axis.
    MaskMul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    ReduceMean(Var),
    Reshape(Var),
    Frame(Var, usize),
    Stack(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Detach(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::Scale(a, _)
            | Op::ReduceMean(a)
            | Op::Reshape(a)
            | Op::Frame(a, _)
            | Op::GatherRows(a, _)
            | Op::Detach(a) => vec![*a],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MaskMul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Conv { x, w, b, .. } => vec![*x, *w, *b],
            Op::Stack(parts) => parts.clone(),
        }
    }

    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Abs(_) => OpKind::Abs,
            Op::Conv { geom, .. } if geom.kernel_rows == 1 => OpKind::Conv1d,
            Op::Conv { .. } => OpKind::Conv2d,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) | Op::MaskMul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::ReduceMean(_) => OpKind::ReduceMean,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Frame(..) => OpKind::Frame,
            Op::Stack(_) => OpKind::Stack,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Detach(_) => OpKind::Detach,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Scales the input gradients produced by every node of `kind`. Only meant
/// for negative-control fixtures that must make a gradient check fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFault {
    pub kind: OpKind,
    pub scale: f64,
}

/// Tape of operations in insertion (= topological) order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<GradientFault>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    /// Gradient of a parameter leaf; panics for non-parameter nodes.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.grads
            .get(&v)
            .unwrap_or_else(|| panic!("node {} is not a parameter leaf", v.0))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: GradientFault) -> Self {
        Graph { nodes: Vec::new(), fault: Some(fault) }
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Direct inputs of `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: true }, value)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: false }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] by [{k2}x{n}]: inner extents differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transposed()?;
        Ok(self.push(Op::Transpose(a), t))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2("softmax_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&src[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        Ok(self.push(Op::SoftmaxRows(x), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2("log_softmax_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        Ok(self.push(Op::LogSoftmaxRows(x), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), t)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), t)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::abs);
        self.push(Op::Abs(x), t)
    }

    fn conv(&mut self, op: &'static str, x: Var, w: Var, b: Var, two_d: bool) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let geom = match (two_d, xs.as_slice(), ws.as_slice()) {
            (false, &[c_in, len], &[c_out, c_in2, 3]) if c_in == c_in2 => {
                ConvGeom { c_in, c_out, height: 1, width: len, kernel_rows: 1 }
            }
            (true, &[c_in, h, wd], &[c_out, c_in2, 3, 3]) if c_in == c_in2 => {
                ConvGeom { c_in, c_out, height: h, width: wd, kernel_rows: 3 }
            }
            _ => return Err(shape_err(op, format!("input {xs:?} incompatible with kernel {ws:?}"))),
        };
        if bs != [geom.c_out] {
            return Err(shape_err(op, format!("bias {bs:?} for {} output channels", geom.c_out)));
        }
        let out = geom.forward(self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = if two_d { vec![geom.c_out, geom.height, geom.width] } else { vec![geom.c_out, geom.width] };
        Ok(self.push(Op::Conv { x, w, b, geom }, Tensor::from_parts(shape, out)))
    }

    /// `x: C_in×L`, `w: C_out×C_in×3`, `b: C_out`; zero padding 1, no kernel flip.
    pub fn conv1d_same3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv("conv1d_same3", x, w, b, false)
    }

    /// `x: C_in×H×W`, `w: C_out×C_in×3×3`, `b: C_out`.
    pub fn conv2d_same3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv("conv2d_same3", x, w, b, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), t))
    }

    /// Elementwise product. `b` may also drop the trailing axis of `a`, in
    /// which case each of its entries scales a whole channel vector (the
    /// mask-over-channels pattern). No other broadcasting is accepted.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa == sb {
            let t = self.zip_with(a, b, |x, y| x * y);
            return Ok(self.push(Op::Mul(a, b), t));
        }
        if !sa.is_empty() && sb == &sa[..sa.len() - 1] {
            let channels = *sa.last().unwrap();
            let mask = self.value(b).data();
            let mut data = self.value(a).data().to_vec();
            for (r, m) in mask.iter().enumerate() {
                for v in &mut data[r * channels..(r + 1) * channels] {
                    *v *= m;
                }
            }
            let t = Tensor::from_parts(sa.to_vec(), data);
            return Ok(self.push(Op::MaskMul(a, b), t));
        }
        Err(shape_err("mul", format!("cannot combine {sa:?} with {sb:?}")))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        self.push(Op::Scale(a, s), t)
    }

    /// `x: m×n` plus a bias row `b: n` added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2("add_bias", self.value(x))?;
        if self.value(b).shape() != [n] {
            return Err(shape_err("add_bias", format!("bias {:?} for {n} columns", self.value(b).shape())));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bias[j];
            }
        }
        Ok(self.push(Op::AddBias(x, b), Tensor::from_parts(vec![m, n], data)))
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mean = t.sum() / t.len() as f64;
        self.push(Op::ReduceMean(x), Tensor::scalar(mean))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// Slice `index` along the leading axis.
    pub fn frame(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x).frame(index)?;
        Ok(self.push(Op::Frame(x, index), t))
    }

    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let t = Tensor::stack(&values)?;
        Ok(self.push(Op::Stack(parts.to_vec()), t))
    }

    /// Rows `indices` of the matrix `x`, in order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = dims2("gather_rows", self.value(x))?;
        if indices.is_empty() {
            return Err(Error::Empty { op: "gather_rows" });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &r in indices {
            if r >= m {
                return Err(shape_err("gather_rows", format!("row {r} out of range for {m} rows")));
            }
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let t = Tensor::from_parts(vec![indices.len(), n], data);
        Ok(self.push(Op::GatherRows(x, indices.to_vec()), t))
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(Op::Detach(x), t)
    }

    /// Reverse sweep from the scalar `loss`. Every parameter leaf gets an
    /// entry, zero when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contrib: Vec<(Var, Tensor)> = Vec::with_capacity(3);
            match &node.op {
                Op::Leaf { param } => {
                    if *param {
                        out.grads.insert(Var(idx), dy);
                    }
                    continue;
                }
                Op::Detach(_) => continue,
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(dy.data(), tb.data(), &mut da, m, n, k);
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(ta.data(), dy.data(), &mut db, k, m, n);
                    contrib.push((*a, Tensor::from_parts(vec![m, k], da)));
                    contrib.push((*b, Tensor::from_parts(vec![k, n], db)));
                }
                Op::Transpose(a) => contrib.push((*a, dy.transposed()?)),
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let n = y.shape()[1];
                    let mut dx = vec![0.0; y.len()];
                    for (r, (yr, gr)) in y.data().chunks(n).zip(dy.data().chunks(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    contrib.push((*x, Tensor::from_parts(y.shape().to_vec(), dx)));
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &node.value;
                    let n = y.shape()[1];
                    let mut dx = vec![0.0; y.len()];
                    for (r, (yr, gr)) in y.data().chunks(n).zip(dy.data().chunks(n)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..n {
                            dx[r * n + j] = gr[j] - yr[j].exp() * total;
                        }
                    }
                    contrib.push((*x, Tensor::from_parts(y.shape().to_vec(), dx)));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = xv.data().iter().zip(dy.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 });
                    contrib.push((*x, Tensor::from_parts(xv.shape().to_vec(), d.collect())));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = y.data().iter().zip(dy.data()).map(|(&v, &g)| g * (1.0 - v * v));
                    contrib.push((*x, Tensor::from_parts(y.shape().to_vec(), d.collect())));
                }
                Op::Abs(x) => {
                    let xv = self.value(*x);
                    let d = xv.data().iter().zip(dy.data()).map(|(&v, &g)| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    contrib.push((*x, Tensor::from_parts(xv.shape().to_vec(), d.collect())));
                }
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = geom.backward(self.value(*x).data(), self.value(*w).data(), dy.data());
                    contrib.push((*x, Tensor::from_parts(self.value(*x).shape().to_vec(), dx)));
                    contrib.push((*w, Tensor::from_parts(self.value(*w).shape().to_vec(), dw)));
                    contrib.push((*b, Tensor::from_parts(self.value(*b).shape().to_vec(), db)));
                }
                Op::Add(a, b) => {
                    contrib.push((*a, dy.clone()));
                    contrib.push((*b, dy));
                }
                Op::Sub(a, b) => {
                    contrib.push((*b, dy.map(|v| -v)));
                    contrib.push((*a, dy));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = dy.data().iter().zip(tb.data()).map(|(g, v)| g * v).collect();
                    let db = dy.data().iter().zip(ta.data()).map(|(g, v)| g * v).collect();
                    contrib.push((*a, Tensor::from_parts(ta.shape().to_vec(), da)));
                    contrib.push((*b, Tensor::from_parts(tb.shape().to_vec(), db)));
                }
                Op::MaskMul(a, m) => {
                    let (ta, tm) = (self.value(*a), self.value(*m));
                    let channels = *ta.shape().last().unwrap();
                    let mut da = dy.data().to_vec();
                    let mut dm = vec![0.0; tm.len()];
                    for (r, mv) in tm.data().iter().enumerate() {
                        for c in 0..channels {
                            let i = r * channels + c;
                            dm[r] += dy.data()[i] * ta.data()[i];
                            da[i] *= mv;
                        }
                    }
                    contrib.push((*a, Tensor::from_parts(ta.shape().to_vec(), da)));
                    contrib.push((*m, Tensor::from_parts(tm.shape().to_vec(), dm)));
                }
                Op::Scale(a, s) => contrib.push((*a, dy.map(|v| v * s))),
                Op::AddBias(x, b) => {
                    let n = dy.shape()[1];
                    let mut db = vec![0.0; n];
                    for row in dy.data().chunks(n) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    contrib.push((*b, Tensor::from_parts(vec![n], db)));
                    contrib.push((*x, dy));
                }
                Op::ReduceMean(x) => {
                    let xv = self.value(*x);
                    let g = dy.item() / xv.len() as f64;
                    contrib.push((*x, Tensor::full(xv.shape(), g)));
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    contrib.push((*x, Tensor::from_parts(shape, dy.into_data())));
                }
                Op::Frame(x, index) => {
                    let xv = self.value(*x);
                    let size = dy.len();
                    let mut d = vec![0.0; xv.len()];
                    d[index * size..(index + 1) * size].copy_from_slice(dy.data());
                    contrib.push((*x, Tensor::from_parts(xv.shape().to_vec(), d)));
                }
                Op::Stack(parts) => {
                    for (i, p) in parts.iter().enumerate() {
                        contrib.push((*p, dy.frame(i)?));
                    }
                }
                Op::GatherRows(x, indices) => {
                    let xv = self.value(*x);
                    let n = xv.shape()[1];
                    let mut d = vec![0.0; xv.len()];
                    for (k, &r) in indices.iter().enumerate() {
                        for j in 0..n {
                            d[r * n + j] += dy.data()[k * n + j];
                        }
                    }
                    contrib.push((*x, Tensor::from_parts(xv.shape().to_vec(), d)));
                }
            }
            let faulty = self.fault.filter(|f| f.kind == node.op.kind());
            for (v, mut g) in contrib {
                if let Some(f) = faulty {
                    g = g.map(|x| x * f.scale);
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { param: true }) {
                out.grads.entry(Var(idx)).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}
