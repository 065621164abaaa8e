//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation eagerly: each call computes its value
//! immediately and appends a node. [`Graph::backward`] then walks the nodes in
//! reverse and accumulates adjoints. Parameters come from a borrowed
//! [`ParamStore`]; frozen entries behave as constants.
//!
//! The primitive set is closed:
//!
//! | primitive | method |
//! |---|---|
//! | matrix product | [`Graph::matmul`] |
//! | elementwise add / sub / mul | [`Graph::add`], [`Graph::sub`], [`Graph::mul`] |
//! | broadcast add / mul of a row or column vector | [`Graph::add_row`], [`Graph::add_col`], [`Graph::mul_row`] |
//! | scaling by a constant | [`Graph::scale`] |
//! | concatenation | [`Graph::hconcat`], [`Graph::vconcat`] |
//! | sigmoid, tanh, leaky rectifier | [`Graph::sigmoid`], [`Graph::tanh`], [`Graph::leaky_relu`] |
//! | softmax over a masked row subset | [`Graph::masked_softmax_rows`] |
//! | row log-softmax | [`Graph::log_softmax_rows`] |
//! | reductions | [`Graph::sum`], [`Graph::sum_rows`], [`Graph::sum_cols`] |
//! | column standardization | [`Graph::standardize_cols`] |
//! | Euclidean row norms | [`Graph::row_norms`] |
//! | layout: transpose, reshape, slicing, row gather | [`Graph::transpose`], [`Graph::reshape`], [`Graph::slice_rows`], [`Graph::slice_cols`], [`Graph::gather_rows`] |
//!
//! Activations chosen at run time go through [`Graph::apply_unary`], which
//! rejects names outside the set.

use std::collections::{BTreeMap, HashMap};

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Variable,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddCol(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    HConcat(Vec<NodeId>),
    VConcat(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    MaskedSoftmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Standardize { x: NodeId, inv_std: Vec<f64> },
    RowNorms(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Named activation functions available to configurable layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    LeakyRelu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(Error::UnsupportedPrimitive(other.to_string())),
        }
    }
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    /// Scalar evaluation, used outside the graph.
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu => leaky(v, LEAKY_SLOPE),
        }
    }

    /// Derivative at `v`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - v.tanh().powi(2),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Gradients of a scalar root with respect to trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Matrix) {
        self.by_name.insert(name.into(), grad);
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Accumulates `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (k, g) in &other.by_name {
            match self.by_name.get_mut(k) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.by_name.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|m| m.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// A constant input.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose adjoint can be read with [`Graph::backward_wrt`].
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    /// The node bound to parameter `name`; repeated calls share one node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(id) = self.params.get(name) {
            return Ok(*id);
        }
        let p = self
            .store
            .param(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let id = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Sub(a, b), t))
    }

    /// Elementwise product. Also serves as the elementwise mask when one side
    /// is a constant binary matrix.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Mul(a, b), t))
    }

    /// `x + 1·row`, with `row` of shape 1×cols.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} with {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % cols])
            .collect();
        let v = Matrix::from_computed(xv.rows(), cols, data)?;
        let t = self.tracked(x) || self.tracked(row);
        Ok(self.push(v, Op::AddRow(x, row), t))
    }

    /// `x + col·1ᵀ`, with `col` of shape rows×1.
    pub fn add_col(&mut self, x: NodeId, col: NodeId) -> Result<NodeId> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(Error::Shape(format!(
                "add_col {:?} with {:?}",
                xv.shape(),
                cv.shape()
            )));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + cv.data()[i / cols])
            .collect();
        let v = Matrix::from_computed(xv.rows(), cols, data)?;
        let t = self.tracked(x) || self.tracked(col);
        Ok(self.push(v, Op::AddCol(x, col), t))
    }

    /// Scales each column of `x` by the matching entry of a 1×cols `row`.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "mul_row {:?} with {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv.data()[i % cols])
            .collect();
        let v = Matrix::from_computed(xv.rows(), cols, data)?;
        let t = self.tracked(x) || self.tracked(row);
        Ok(self.push(v, Op::MulRow(x, row), t))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(x).scale(s)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Scale(x, s), t))
    }

    pub fn hconcat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hstack(&mats)?;
        let t = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(v, Op::HConcat(parts.to_vec()), t))
    }

    pub fn vconcat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::vstack(&mats)?;
        let t = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(v, Op::VConcat(parts.to_vec()), t))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(sigmoid)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Sigmoid(x), t))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(f64::tanh)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Tanh(x), t))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let v = self.value(x).map(|a| leaky(a, slope))?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::LeakyRelu(x, slope), t))
    }

    pub fn activate(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        match act {
            Activation::Identity => Ok(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
            Activation::LeakyRelu => self.leaky_relu(x, LEAKY_SLOPE),
        }
    }

    /// Applies a unary primitive by name; unknown names are rejected.
    pub fn apply_unary(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let act: Activation = name.parse()?;
        self.activate(x, act)
    }

    /// Row-wise softmax restricted to entries where the constant `mask` is 1.
    /// Masked-out entries are exactly 0. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: &Matrix) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "masked softmax {:?} with mask {:?}",
                xv.shape(),
                mask.shape()
            )));
        }
        let (rows, cols) = xv.shape();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let m = mask.row(r);
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, k)| **k != 0.0)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("masked softmax row {r} is empty")));
            }
            let mut z = 0.0;
            for c in 0..cols {
                if m[c] != 0.0 {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    z += e;
                }
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= z;
            }
        }
        let v = Matrix::from_computed(rows, cols, out)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::MaskedSoftmax(x), t))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let v = Matrix::from_computed(rows, cols, out)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::LogSoftmax(x), t))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Matrix::scalar(self.value(x).sum())?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Sum(x), t))
    }

    /// Column sums, 1×cols.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        for r in 0..xv.rows() {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let v = Matrix::from_computed(1, xv.cols(), out)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::SumRows(x), t))
    }

    /// Row sums, rows×1.
    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let v = Matrix::from_computed(xv.rows(), 1, out)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::SumCols(x), t))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Column-wise `(x − mean) / sqrt(var + eps)` with the biased batch
    /// variance. Returns the node plus the column means and variances.
    pub fn standardize_cols(&mut self, x: NodeId, eps: f64) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if rows < 2 {
            return Err(Error::BatchTooSmall(rows));
        }
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = xv.get(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push((xv.get(r, c) - mean[c]) * inv_std[c]);
            }
        }
        let v = Matrix::from_computed(rows, cols, out)?;
        let t = self.tracked(x);
        let id = self.push(v, Op::Standardize { x, inv_std }, t);
        Ok((id, mean, var))
    }

    /// Euclidean norm of each row, rows×1. The derivative at a zero row is taken as 0.
    pub fn row_norms(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out = (0..xv.rows())
            .map(|r| xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let v = Matrix::from_computed(xv.rows(), 1, out)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::RowNorms(x), t))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose();
        let t = self.tracked(x);
        Ok(self.push(v, Op::Transpose(x), t))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(x).reshape(rows, cols)?;
        let t = self.tracked(x);
        Ok(self.push(v, Op::Reshape(x), t))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::Shape(format!(
                "slice rows {start}..{} of {}",
                start + len,
                xv.rows()
            )));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = xv.select_rows(&idx);
        let t = self.tracked(x);
        Ok(self.push(v, Op::SliceRows(x, start), t))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "slice cols {start}..{} of {}",
                start + len,
                xv.cols()
            )));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = xv.select_cols(&idx);
        let t = self.tracked(x);
        Ok(self.push(v, Op::SliceCols(x, start), t))
    }

    /// Rows of `x` picked by index; indices may repeat.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if let Some(bad) = idx.iter().find(|i| **i >= xv.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {}", xv.rows())));
        }
        let v = xv.select_rows(idx);
        let t = self.tracked(x);
        Ok(self.push(v, Op::GatherRows(x, idx.to_vec()), t))
    }

    /// Adjoints of the 1×1 `root` for every trainable parameter reached.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let adj = self.adjoints(root)?;
        let mut grads = Gradients::default();
        for (name, id) in &self.params {
            if !self.nodes[id.0].tracked {
                continue;
            }
            let g = adj[id.0]
                .clone()
                .unwrap_or_else(|| Matrix::zeros(self.value(*id).rows(), self.value(*id).cols()));
            grads.by_name.insert(name.clone(), g);
        }
        Ok(grads)
    }

    /// Adjoints of the 1×1 `root` with respect to arbitrary tracked nodes.
    pub fn backward_wrt(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Matrix>> {
        let adj = self.adjoints(root)?;
        Ok(wrt
            .iter()
            .map(|id| {
                adj[id.0].clone().unwrap_or_else(|| {
                    let (r, c) = self.shape(*id);
                    Matrix::zeros(r, c)
                })
            })
            .collect())
    }

    fn adjoints(&self, root: NodeId) -> Result<Vec<Option<Matrix>>> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
        if !self.nodes[id.0].tracked {
            return;
        }
        match &mut adj[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param | Op::Variable => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(adj, *a, ga);
                }
                if self.tracked(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(adj, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                if self.tracked(*b) {
                    self.accumulate(adj, *b, g.scale(-1.0)?);
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(adj, *a, g.hadamard(self.value(*b))?);
                }
                if self.tracked(*b) {
                    self.accumulate(adj, *b, g.hadamard(self.value(*a))?);
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(adj, *x, g.clone());
                if self.tracked(*row) {
                    self.accumulate(adj, *row, column_sums(g));
                }
            }
            Op::AddCol(x, col) => {
                self.accumulate(adj, *x, g.clone());
                if self.tracked(*col) {
                    let sums = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    self.accumulate(adj, *col, Matrix::from_computed(g.rows(), 1, sums)?);
                }
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row);
                let cols = g.cols();
                if self.tracked(*x) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, v)| v * rv.data()[k % cols])
                        .collect();
                    self.accumulate(adj, *x, Matrix::from_computed(g.rows(), cols, data)?);
                }
                if self.tracked(*row) {
                    let prod = g.hadamard(self.value(*x))?;
                    self.accumulate(adj, *row, column_sums(&prod));
                }
            }
            Op::Scale(x, s) => self.accumulate(adj, *x, g.scale(*s)?),
            Op::HConcat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.tracked(*p) {
                        let idx: Vec<usize> = (start..start + w).collect();
                        self.accumulate(adj, *p, g.select_cols(&idx));
                    }
                    start += w;
                }
            }
            Op::VConcat(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.tracked(*p) {
                        let idx: Vec<usize> = (start..start + h).collect();
                        self.accumulate(adj, *p, g.select_rows(&idx));
                    }
                    start += h;
                }
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(out, |gv, s| gv * s * (1.0 - s))?;
                self.accumulate(adj, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(out, |gv, t| gv * (1.0 - t * t))?;
                self.accumulate(adj, *x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let d = g.zip_map(self.value(*x), |gv, v| if v > 0.0 { gv } else { gv * slope })?;
                self.accumulate(adj, *x, d);
            }
            Op::MaskedSoftmax(x) => {
                // dx = s ⊙ (g − rowsum(g ⊙ s)); masked entries have s = 0.
                let (rows, cols) = out.shape();
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let s = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(s.iter().zip(gr).map(|(sv, gv)| sv * (gv - dot)));
                }
                self.accumulate(adj, *x, Matrix::from_computed(rows, cols, d)?);
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = out.shape();
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let gr = g.row(r);
                    let gsum: f64 = gr.iter().sum();
                    d.extend(out.row(r).iter().zip(gr).map(|(lv, gv)| gv - lv.exp() * gsum));
                }
                self.accumulate(adj, *x, Matrix::from_computed(rows, cols, d)?);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(adj, *x, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                let data = (0..r * c).map(|k| g.data()[k % c]).collect();
                self.accumulate(adj, *x, Matrix::from_computed(r, c, data)?);
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let data = (0..r * c).map(|k| g.data()[k / c]).collect();
                self.accumulate(adj, *x, Matrix::from_computed(r, c, data)?);
            }
            Op::Standardize { x, inv_std } => {
                // dx = inv_std/n · (n·g − Σg − y·Σ(g⊙y)), per column.
                let (rows, cols) = out.shape();
                let n = rows as f64;
                let mut gsum = vec![0.0; cols];
                let mut gy = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gsum[c] += g.get(r, c);
                        gy[c] += g.get(r, c) * out.get(r, c);
                    }
                }
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        d.push(inv_std[c] / n * (n * g.get(r, c) - gsum[c] - out.get(r, c) * gy[c]));
                    }
                }
                self.accumulate(adj, *x, Matrix::from_computed(rows, cols, d)?);
            }
            Op::RowNorms(x) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.shape();
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let norm = out.get(r, 0);
                    let gr = g.get(r, 0);
                    for v in xv.row(r) {
                        d.push(if norm > 0.0 { gr * v / norm } else { 0.0 });
                    }
                }
                self.accumulate(adj, *x, Matrix::from_computed(rows, cols, d)?);
            }
            Op::Transpose(x) => self.accumulate(adj, *x, g.transpose()),
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(adj, *x, g.reshape(r, c)?);
            }
            Op::SliceRows(x, start) => {
                let (r, c) = self.shape(*x);
                let mut full = Matrix::zeros(r, c);
                full.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                self.accumulate(adj, *x, full);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let mut full = Matrix::zeros(r, c);
                for row in 0..r {
                    full.data_mut()[row * c + start..row * c + start + g.cols()]
                        .copy_from_slice(g.row(row));
                }
                self.accumulate(adj, *x, full);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut full = Matrix::zeros(r, c);
                for (k, src) in idx.iter().enumerate() {
                    let dst = &mut full.data_mut()[src * c..(src + 1) * c];
                    for (d, v) in dst.iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                self.accumulate(adj, *x, full);
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Builds a computation with `build`, evaluates it, and differentiates the
/// resulting 1×1 loss with respect to every trainable parameter in `store`.
///
/// Trainable parameters the computation never touches get zero gradients.
pub fn evaluate_with_gradients<F>(store: &ParamStore, build: F) -> Result<(Matrix, Gradients)>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let root = build(&mut g)?;
    let mut grads = g.backward(root)?;
    for name in store.trainable_names() {
        if grads.get(name).is_none() {
            let (r, c) = store.get(name)?.shape();
            grads.insert(name, Matrix::zeros(r, c));
        }
    }
    Ok((g.value(root).clone(), grads))
}

/// Evaluates a computation without differentiating it.
pub fn evaluate<F>(store: &ParamStore, build: F) -> Result<Matrix>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let root = build(&mut g)?;
    Ok(g.value(root).clone())
}
