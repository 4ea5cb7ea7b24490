//! Tensor-level Wengert tape.
//!
//! Every forward operation appends a node holding its value and the
//! information its backward rule needs. [`Tape::backward`] walks the nodes
//! in reverse creation order, which is a topological order by construction,
//! so each node's adjoint is complete before it is propagated.

use std::collections::HashMap;

use super::tensor::{mm, mm_at, mm_bt, softmax_rows, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive with a hand-written vector-Jacobian product.
///
/// `backward` receives the forward inputs, the forward output and the
/// output adjoint, and returns one adjoint per input (`None` where the
/// corresponding entry of `needs` is false).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    L2NormalizeRows(Var, Vec<f64>),
    LogSumExp(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Trainable tensor with a same-shape gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Index of a [`Parameter`] inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces the value of a parameter with a same-shape tensor.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Input(format!("unknown parameter {name}")))?;
        let p = self.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {name}: shape {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// Ordered record of primitive applications.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose adjoint is retained (useful for probing gradients).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf bound to a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id.0), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::Dimension(format!(
                "matmul {}×{} · {}×{}",
                ta.rows(),
                ta.cols(),
                tb.rows(),
                tb.cols()
            )));
        }
        let out = mm(ta, tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Dimension(format!(
                "matmul_bt {}×{} · ({}×{})ᵀ",
                ta.rows(),
                ta.cols(),
                tb.rows(),
                tb.cols()
            )));
        }
        let out = mm_bt(ta, tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Element-wise quotient; a zero divisor is a numeric guard error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "div")?;
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Numeric("division by zero".into()));
        }
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Div(a, b), ng))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Dimension(format!(
                "add_row: {:?} + {:?}",
                ta.shape(),
                tr.shape()
            )));
        }
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for r in out.chunks_mut(n) {
            for (o, b) in r.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_raw(ta.shape().to_vec(), out);
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), gelu);
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        let out = map(self.value(a), f64::ln);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Ln(a), ng))
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = map(self.value(a), softplus);
        let ng = self.needs(a);
        self.push(out, Op::Softplus(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(Error::Dimension(format!(
                "layer_norm width {d}, gain {:?}, bias {:?}",
                tg.shape(),
                tb.shape()
            )));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row_slice(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::from_raw(tx.shape().to_vec(), out);
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Column means of an `L×d` matrix, as a `1×d` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (l, d) = (t.rows(), t.cols());
        let mut out = vec![0.0; d];
        for r in 0..l {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= l as f64;
        }
        let ng = self.needs(a);
        self.push(Tensor::from_raw(vec![1, d], out), Op::MeanRows(a), ng)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(t.row_slice(r));
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_raw(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Dimension("stack_rows: column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_raw(vec![rows, cols], out),
            Op::StackRows(parts.to_vec()),
            ng,
        ))
    }

    /// Row `i` of a matrix as a `1×n` node.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.rows() {
            return Err(Error::Dimension(format!("row {i} of {} rows", t.rows())));
        }
        let out = Tensor::from_raw(vec![1, t.cols()], t.row_slice(i).to_vec());
        let ng = self.needs(a);
        Ok(self.push(out, Op::Row(a, i), ng))
    }

    /// Scales every row to unit L2 norm; a zero row is a numeric guard error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Numeric("normalizing a zero vector".into()));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        let out = Tensor::from_raw(t.shape().to_vec(), out);
        let ng = self.needs(a);
        Ok(self.push(out, Op::L2NormalizeRows(a, norms), ng))
    }

    /// `log Σ exp(aᵢ)` over every entry, as a `1×1` node.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::LogSumExp(a), ng)
    }

    /// Records a custom primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(output, Op::Custom(op, inputs.to_vec()), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_raw(lv.shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // Leaves keep their adjoint for the caller.
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, mm_bt(g, self.value(*b)), grads);
                }
                if self.needs(*b) {
                    acc(*b, mm_at(self.value(*a), g), grads);
                }
            }
            Op::MatMulBt(a, b) => {
                if self.needs(*a) {
                    acc(*a, mm(g, self.value(*b)), grads);
                }
                if self.needs(*b) {
                    acc(*b, mm_at(g, self.value(*a)), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, map(g, |v| -v), grads);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, zip_map(g, self.value(*b), |x, y| x * y), grads);
                }
                if self.needs(*b) {
                    acc(*b, zip_map(g, self.value(*a), |x, y| x * y), grads);
                }
            }
            Op::Div(a, b) => {
                let tb = self.value(*b);
                if self.needs(*a) {
                    acc(*a, zip_map(g, tb, |x, y| x / y), grads);
                }
                if self.needs(*b) {
                    let q = &node.value;
                    let gb = Tensor::from_raw(
                        g.shape().to_vec(),
                        g.data().iter().zip(q.data()).zip(tb.data()).map(|((gv, qv), bv)| -gv * qv / bv).collect(),
                    );
                    acc(*b, gb, grads);
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone(), grads);
                if self.needs(*row) {
                    let n = g.cols();
                    let mut s = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (o, v) in s.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    acc(*row, Tensor::from_raw(vec![1, n], s), grads);
                }
            }
            Op::Scale(a, s) => acc(*a, map(g, |v| v * s), grads),
            Op::Gelu(a) => acc(*a, zip_map(g, self.value(*a), |gv, x| gv * gelu_grad(x)), grads),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * y), grads),
            Op::Ln(a) => acc(*a, zip_map(g, self.value(*a), |gv, x| gv / x), grads),
            Op::Softplus(a) => {
                acc(*a, zip_map(g, self.value(*a), |gv, x| gv * sigmoid(x)), grads)
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut out = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        out[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, Tensor::from_raw(y.shape().to_vec(), out), grads);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = g.cols();
                let rows = g.rows();
                let gn = self.value(*gain).data();
                if self.needs(*bias) || self.needs(*gain) {
                    let mut gb = vec![0.0; d];
                    let mut gg = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            let gv = g.data()[r * d + c];
                            gb[c] += gv;
                            gg[c] += gv * xhat[r * d + c];
                        }
                    }
                    let bshape = self.value(*bias).shape().to_vec();
                    let gshape = self.value(*gain).shape().to_vec();
                    acc(*bias, Tensor::from_raw(bshape, gb), grads);
                    acc(*gain, Tensor::from_raw(gshape, gg), grads);
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..d {
                            let gh = g.data()[r * d + c] * gn[c];
                            m1 += gh;
                            m2 += gh * xhat[r * d + c];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for c in 0..d {
                            let gh = g.data()[r * d + c] * gn[c];
                            gx[r * d + c] = rstd[r] * (gh - m1 - xhat[r * d + c] * m2);
                        }
                    }
                    acc(*x, Tensor::from_raw(g.shape().to_vec(), gx), grads);
                }
            }
            Op::Sum(a) => {
                let s = self.value(*a).shape().to_vec();
                acc(*a, Tensor::filled(&s, g.data()[0]), grads);
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let l = t.rows();
                let mut out = Vec::with_capacity(t.len());
                for _ in 0..l {
                    out.extend(g.data().iter().map(|v| v / l as f64));
                }
                acc(*a, Tensor::from_raw(t.shape().to_vec(), out), grads);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let mut out = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            out.extend_from_slice(&g.data()[r * total + off..r * total + off + c]);
                        }
                        acc(p, Tensor::from_raw(vec![rows, c], out), grads);
                    }
                    off += c;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let t = self.value(p);
                    let n = t.len();
                    if self.needs(p) {
                        acc(
                            p,
                            Tensor::from_raw(t.shape().to_vec(), g.data()[off..off + n].to_vec()),
                            grads,
                        );
                    }
                    off += n;
                }
            }
            Op::Row(a, i) => {
                let t = self.value(*a);
                let mut out = Tensor::zeros(t.shape());
                let c = t.cols();
                out.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.data());
                acc(*a, out, grads);
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                let n = y.cols();
                let mut out = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        out[r * n + c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                acc(*a, Tensor::from_raw(y.shape().to_vec(), out), grads);
            }
            Op::LogSumExp(a) => {
                let y = node.value.data()[0];
                let gv = g.data()[0];
                acc(*a, map(self.value(*a), |v| gv * (v - y).exp()), grads);
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let outs = op.backward(&ins, &node.value, g, &needs);
                for (&v, gi) in inputs.iter().zip(outs) {
                    if let Some(gi) = gi {
                        acc(v, gi, grads);
                    }
                }
            }
        }
    }

    /// Adds the adjoints of parameter leaves into `store`'s accumulators.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads.grads.get(i).and_then(Option::as_ref) {
                    store.params[pid].grad.add_assign(g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", t(&[vec![0.3, -1.2, 4.0]]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", t(&[vec![1.0, 2.0]]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_backward_is_a_contract_error() {
        let mut tape = Tape::new();
        let p = tape.variable(t(&[vec![1.0, 2.0]]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_examples() {
        let mut tape = Tape::new();
        let c = 17.5;
        let x = tape.constant(t(&[vec![0.0, 0.0, 0.0]]));
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        for k in 0..3 {
            assert!((v.at(0, k) - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = tape.constant(t(&[vec![c, c + 2f64.ln()]]));
        let y2 = tape.softmax_rows(z);
        assert!((tape.value(y2).at(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((tape.value(y2).at(0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![5.0, 5.0, 5.0], vec![1.0, -1.0, 0.0]]));
        let g = tape.constant(t(&[vec![1.0; 3]]));
        let b = tape.constant(t(&[vec![0.0; 3]]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).row_slice(0).iter().all(|v| v.abs() < 1e-12));

        let x = tape.constant(t(&[vec![1.0, -1.0]]));
        let g = tape.constant(t(&[vec![1.0; 2]]));
        let b = tape.constant(t(&[vec![0.0; 2]]));
        let y = tape.layer_norm(x, g, b, 1e-14).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_row_normalization_is_guarded() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0]]));
        assert!(matches!(tape.l2_normalize_rows(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn quotient_gradient() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[vec![3.0, -1.0]]));
        let b = tape.variable(t(&[vec![2.0, 4.0]]));
        let q = tape.div(a, b).unwrap();
        let s = tape.sum(q);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.5, 0.25]);
        assert_eq!(g.get(b).unwrap().data(), &[-0.75, 0.0625]);
        let z = tape.constant(t(&[vec![0.0, 1.0]]));
        assert!(matches!(tape.div(a, z), Err(Error::Numeric(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[vec![2.0]]));
        let v = tape.variable(t(&[vec![3.0]]));
        let m = tape.mul(c, v).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(v).unwrap().data(), &[2.0]);
    }
}
