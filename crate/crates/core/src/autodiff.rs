//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`]s during a forward pass.
//! Nodes are appended in creation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters enter the tape through [`Tape::param`] (whole tensor) or
//! [`Tape::param_rows`] (a gathered subset of rows, used for embedding tables so
//! that a backward pass never materialises a dense table-sized gradient).
//!
//! A tape is single-threaded. Independent tapes share nothing and can run on
//! different threads against the same read-only [`ParamStore`].

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::param::{ParamGrad, ParamStore};
use crate::tensor::{matmul_a_bt, matmul_at_b, matmul_kernel, softmax_rows, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm(usize, Rc<[f64]>),
    Transpose(usize),
    Gather(usize, Rc<[usize]>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SumAll(usize),
    SumRows(usize),
    MeanRows(usize),
    Reshape(usize),
    CrossEntropy(usize, Rc<[usize]>, Rc<Tensor>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | AddRow(a, b) | Mul(a, b) | MulRow(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _)
            | AddScalar(a)
            | LeakyRelu(a, _)
            | Sigmoid(a)
            | Gelu(a)
            | Softmax(a)
            | LayerNorm(a, _)
            | Transpose(a)
            | Gather(a, _)
            | SliceCols(a, _)
            | SumAll(a)
            | SumRows(a)
            | MeanRows(a)
            | Reshape(a)
            | CrossEntropy(a, _, _) => vec![*a],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone)]
struct ParamBinding {
    name: String,
    node: usize,
    rows: Option<Vec<usize>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bindings: RefCell<Vec<ParamBinding>>,
    dense_params: RefCell<HashMap<String, usize>>,
    poisoned: Cell<Option<&'static str>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, name: &'static str) -> Var<'_> {
        if self.poisoned.get().is_none() && !value.is_finite() {
            self.poisoned.set(Some(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match &op {
            Op::Leaf => false,
            other => other.parents().iter().any(|&p| nodes[p].needs_grad),
        };
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, "constant")
    }

    /// A free leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let v = self.push(value, Op::Leaf, "leaf");
        self.nodes.borrow_mut()[v.id].needs_grad = true;
        v
    }

    /// Binds a whole parameter tensor. Repeated calls with the same name return
    /// the same node.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        if let Some(&id) = self.dense_params.borrow().get(name) {
            return Ok(Var { tape: self, id });
        }
        let value = store.get(name)?.clone();
        let v = self.leaf(value);
        self.dense_params.borrow_mut().insert(name.to_string(), v.id);
        self.bindings.borrow_mut().push(ParamBinding {
            name: name.to_string(),
            node: v.id,
            rows: None,
        });
        Ok(v)
    }

    /// Gathers `rows` of a rank-2 parameter. The gradient is reported row-sparse.
    pub fn param_rows(&self, store: &ParamStore, name: &str, rows: &[usize]) -> Result<Var<'_>> {
        let table = store.get(name)?;
        let (n, cols) = table.dims2("param_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument {
                op: "param_rows",
                msg: format!("row {bad} out of range for {name} with {n} rows"),
            });
        }
        let mut unique: Vec<usize> = rows.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let mut data = Vec::with_capacity(unique.len() * cols);
        for &r in &unique {
            data.extend_from_slice(table.row_slice(r));
        }
        let leaf = self.leaf(Tensor::new(vec![unique.len(), cols], data)?);
        self.bindings.borrow_mut().push(ParamBinding {
            name: name.to_string(),
            node: leaf.id,
            rows: Some(unique.clone()),
        });
        let positions: Vec<usize> = rows
            .iter()
            .map(|r| unique.binary_search(r).expect("row present"))
            .collect();
        leaf.gather_rows(&positions)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if let Some(op) = self.poisoned.get() {
            return Err(Error::NonFinite { op });
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape(), 1.0));
        let mut leaf_grads = HashMap::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.insert(id, g);
                continue;
            }
            for (parent, contribution) in backprop(&nodes, node, &g) {
                if !nodes[parent].needs_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            leaf_grads,
            shapes,
            bindings: self.bindings.borrow().clone(),
        })
    }

    pub fn non_finite(&self) -> Option<&'static str> {
        self.poisoned.get()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.poisoned.get() {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }
}

/// Parent contributions for one node given its output gradient `g`.
fn backprop(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).cols();
            let ga = matmul_a_bt(g.data(), val(*b).data(), m, n, k);
            let gb = matmul_at_b(val(*a).data(), g.data(), m, k, n);
            vec![
                (*a, Tensor::new(val(*a).shape().to_vec(), ga).unwrap()),
                (*b, Tensor::new(val(*b).shape().to_vec(), gb).unwrap()),
            ]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::AddRow(a, b) => vec![(*a, g.clone()), (*b, col_sums(g, val(*b).shape()))],
        Op::Mul(a, b) => vec![
            (*a, g.zip_map(val(*b), |x, y| x * y)),
            (*b, g.zip_map(val(*a), |x, y| x * y)),
        ],
        Op::MulRow(a, b) => {
            let row = val(*b).data();
            let cols = row.len();
            let mut ga = g.clone();
            for (i, v) in ga.data_mut().iter_mut().enumerate() {
                *v *= row[i % cols];
            }
            let prod = g.zip_map(val(*a), |x, y| x * y);
            vec![(*a, ga), (*b, col_sums(&prod, val(*b).shape()))]
        }
        Op::Scale(a, s) => vec![(*a, g.map(|v| v * s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::LeakyRelu(a, slope) => {
            let x = val(*a);
            vec![(*a, g.zip_map(x, |gv, xv| if xv >= 0.0 { gv } else { gv * slope }))]
        }
        Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)))],
        Op::Gelu(a) => vec![(*a, g.zip_map(val(*a), |gv, x| gv * gelu_grad(x)))],
        Op::Softmax(a) => {
            let cols = y.cols();
            let mut out = vec![0.0; y.len()];
            for ((yr, gr), or) in y
                .data()
                .chunks(cols)
                .zip(g.data().chunks(cols))
                .zip(out.chunks_mut(cols))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    or[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![(*a, Tensor::new(y.shape().to_vec(), out).unwrap())]
        }
        Op::LayerNorm(a, inv_std) => {
            let cols = y.cols();
            let mut out = vec![0.0; y.len()];
            for (r, ((yr, gr), or)) in y
                .data()
                .chunks(cols)
                .zip(g.data().chunks(cols))
                .zip(out.chunks_mut(cols))
                .enumerate()
            {
                let n = cols as f64;
                let mean_g: f64 = gr.iter().sum::<f64>() / n;
                let mean_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                for j in 0..cols {
                    or[j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                }
            }
            vec![(*a, Tensor::new(y.shape().to_vec(), out).unwrap())]
        }
        Op::Transpose(a) => vec![(*a, g.transpose().unwrap())],
        Op::Gather(a, idx) => {
            let src = val(*a);
            let cols = src.cols();
            let mut out = Tensor::zeros(src.shape());
            for (i, &r) in idx.iter().enumerate() {
                let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(g.row_slice(i)) {
                    *d += s;
                }
            }
            vec![(*a, out)]
        }
        Op::ConcatCols(parts) => {
            let rows = y.rows();
            let total = y.cols();
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let w = val(p).cols();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    (p, Tensor::new(val(p).shape().to_vec(), data).unwrap())
                })
                .collect()
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let n = val(p).len();
                    let data = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    (p, Tensor::new(val(p).shape().to_vec(), data).unwrap())
                })
                .collect()
        }
        Op::SliceCols(a, start) => {
            let src = val(*a);
            let (rows, cols) = (src.rows(), src.cols());
            let w = y.cols();
            let mut out = Tensor::zeros(src.shape());
            for r in 0..rows {
                out.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
            }
            vec![(*a, out)]
        }
        Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::SumRows(a) | Op::MeanRows(a) => {
            let src = val(*a);
            let scale = if matches!(node.op, Op::MeanRows(_)) {
                1.0 / src.rows() as f64
            } else {
                1.0
            };
            let cols = src.cols();
            let mut out = Tensor::zeros(src.shape());
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = g.data()[i % cols] * scale;
            }
            vec![(*a, out)]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshaped(val(*a).shape()).unwrap())],
        Op::CrossEntropy(a, labels, probs) => {
            let b = labels.len() as f64;
            let cols = probs.cols();
            let mut out = probs.as_ref().clone();
            for (i, &l) in labels.iter().enumerate() {
                out.data_mut()[i * cols + l] -= 1.0;
            }
            let scale = g.item() / b;
            vec![(*a, out.map(|v| v * scale))]
        }
    }
}

fn col_sums(g: &Tensor, shape: &[usize]) -> Tensor {
    let cols = g.cols();
    let mut out = vec![0.0; cols];
    for row in g.data().chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.cols()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rows()
    }

    fn unary(
        self,
        name: &'static str,
        f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value)?
        };
        Ok(self.tape.push(value, op, name))
    }

    fn binary(
        self,
        rhs: Var<'t>,
        name: &'static str,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[rhs.id].value)?
        };
        Ok(self.tape.push(value, op, name))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, "matmul", |x, y| {
            let (m, k) = x.dims2("matmul")?;
            let (k2, n) = y.dims2("matmul")?;
            if k != k2 {
                return Err(Error::dim("matmul", x.shape(), y.shape()));
            }
            let data = matmul_kernel(x.data(), y.data(), m, k, n);
            Ok((Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
        })
    }

    fn same_shape(
        self,
        rhs: Var<'t>,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.binary(rhs, name, |x, y| {
            if x.shape() != y.shape() {
                return Err(Error::dim(name, x.shape(), y.shape()));
            }
            Ok((x.zip_map(y, f), op))
        })
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Add(self.id, rhs.id);
        self.same_shape(rhs, "add", |a, b| a + b, op)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Sub(self.id, rhs.id);
        self.same_shape(rhs, "sub", |a, b| a - b, op)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Mul(self.id, rhs.id);
        self.same_shape(rhs, "mul", |a, b| a * b, op)
    }

    fn row_broadcast(
        self,
        row: Var<'t>,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.binary(row, name, |x, r| {
            let (_, cols) = x.dims2(name)?;
            if r.len() != cols || r.rows() != 1 {
                return Err(Error::dim(name, x.shape(), r.shape()));
            }
            let rd = r.data();
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = f(*v, rd[i % cols]);
            }
            Ok((out, op))
        })
    }

    /// `x[m x n] + row[1 x n]` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let op = Op::AddRow(self.id, row.id);
        self.row_broadcast(row, "add_row", |a, b| a + b, op)
    }

    /// `x[m x n] ⊙ row[1 x n]` broadcast over rows.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let op = Op::MulRow(self.id, row.id);
        self.row_broadcast(row, "mul_row", |a, b| a * b, op)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("scale", |x| Ok((x.map(|v| v * s), Op::Scale(a, s))))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("add_scalar", |x| Ok((x.map(|v| v + s), Op::AddScalar(a))))
    }

    /// `max(x, slope·x)`. At exactly zero the positive branch is taken for the
    /// subgradient.
    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidArgument {
                op: "leaky_relu",
                msg: format!("slope {slope} outside (0, 1)"),
            });
        }
        let a = self.id;
        self.unary("leaky_relu", |x| {
            Ok((
                x.map(|v| if v >= 0.0 { v } else { slope * v }),
                Op::LeakyRelu(a, slope),
            ))
        })
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("sigmoid", |x| Ok((x.map(sigmoid), Op::Sigmoid(a))))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("gelu", |x| Ok((x.map(gelu), Op::Gelu(a))))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("softmax", |x| {
            if x.is_empty() || x.cols() == 0 {
                return Err(Error::InvalidArgument {
                    op: "softmax",
                    msg: "empty axis".into(),
                });
            }
            let data = softmax_rows(x.data(), x.cols(), None);
            Ok((Tensor::new(x.shape().to_vec(), data)?, Op::Softmax(a)))
        })
    }

    /// Row-wise softmax restricted to `mask == true` entries; masked entries are 0.
    /// Every row must allow at least one entry.
    pub fn masked_softmax(self, mask: Rc<[bool]>) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("masked_softmax", |x| {
            if mask.len() != x.len() {
                return Err(Error::dim("masked_softmax", x.shape(), &[mask.len()]));
            }
            let cols = x.cols();
            if mask.chunks(cols).any(|row| !row.iter().any(|&m| m)) {
                return Err(Error::InvalidArgument {
                    op: "masked_softmax",
                    msg: "row with no admissible entry".into(),
                });
            }
            let data = softmax_rows(x.data(), cols, Some(&mask));
            Ok((Tensor::new(x.shape().to_vec(), data)?, Op::Softmax(a)))
        })
    }

    /// Row-wise normalisation to zero mean and unit variance, no affine part.
    pub fn layer_norm(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("layer_norm", |x| {
            let cols = x.cols();
            let mut out = x.clone();
            let mut inv = Vec::with_capacity(x.rows());
            for row in out.data_mut().chunks_mut(cols) {
                let n = cols as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * inv_std;
                }
                inv.push(inv_std);
            }
            Ok((out, Op::LayerNorm(a, inv.into())))
        })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("transpose", |x| Ok((x.transpose()?, Op::Transpose(a))))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("gather_rows", |x| {
            let (rows, cols) = x.dims2("gather_rows")?;
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                if r >= rows {
                    return Err(Error::InvalidArgument {
                        op: "gather_rows",
                        msg: format!("row {r} out of range for {rows} rows"),
                    });
                }
                data.extend_from_slice(x.row_slice(r));
            }
            Ok((Tensor::new(vec![idx.len(), cols], data)?, Op::Gather(a, idx.into())))
        })
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("slice_cols", |x| {
            let (rows, cols) = x.dims2("slice_cols")?;
            if start >= end || end > cols {
                return Err(Error::InvalidArgument {
                    op: "slice_cols",
                    msg: format!("range {start}..{end} invalid for {cols} columns"),
                });
            }
            let mut data = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                data.extend_from_slice(&x.row_slice(r)[start..end]);
            }
            Ok((Tensor::new(vec![rows, end - start], data)?, Op::SliceCols(a, start)))
        })
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("sum", |x| Ok((Tensor::scalar(x.sum()), Op::SumAll(a))))
    }

    /// Column sums of a matrix, as a `1 x n` row.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("sum_rows", |x| {
            let (rows, cols) = x.dims2("sum_rows")?;
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                    *o += v;
                }
            }
            Ok((Tensor::new(vec![1, cols], out)?, Op::SumRows(a)))
        })
    }

    /// Column means of a matrix, as a `1 x n` row.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("mean_rows", |x| {
            let (rows, cols) = x.dims2("mean_rows")?;
            if rows == 0 {
                return Err(Error::InvalidArgument {
                    op: "mean_rows",
                    msg: "no rows".into(),
                });
            }
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                    *o += v;
                }
            }
            let n = rows as f64;
            out.iter_mut().for_each(|v| *v /= n);
            Ok((Tensor::new(vec![1, cols], out)?, Op::MeanRows(a)))
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("reshape", |x| Ok((x.clone().reshaped(shape)?, Op::Reshape(a))))
    }

    /// Mean cross-entropy of `self[B x C]` against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let a = self.id;
        self.unary("cross_entropy", |x| {
            let (b, c) = x.dims2("cross_entropy")?;
            if b != labels.len() {
                return Err(Error::dim("cross_entropy", x.shape(), &[labels.len()]));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(Error::LabelOutOfRange {
                    index: bad,
                    classes: c,
                });
            }
            let mut loss = 0.0;
            let mut probs = vec![0.0; b * c];
            for (i, &l) in labels.iter().enumerate() {
                let row = x.row_slice(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                loss += -(row[l] - max - total.ln());
                for j in 0..c {
                    probs[i * c + j] = (row[j] - max).exp() / total;
                }
            }
            let probs = Rc::new(Tensor::new(vec![b, c], probs)?);
            Ok((
                Tensor::scalar(loss / b as f64),
                Op::CrossEntropy(a, labels.into(), probs),
            ))
        })
    }
}

/// Concatenate along columns; all parts share the row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument {
            op: "concat_cols",
            msg: "no parts".into(),
        })?
        .tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
        let rows = vals[0].rows();
        for v in &vals {
            if v.rank() != 2 || v.rows() != rows {
                return Err(Error::dim("concat_cols", vals[0].shape(), v.shape()));
            }
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        Tensor::new(vec![rows, total], data)?
    };
    Ok(tape.push(
        value,
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        "concat_cols",
    ))
}

/// Stack along rows; all parts share the column count.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument {
            op: "concat_rows",
            msg: "no parts".into(),
        })?
        .tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
        let cols = vals[0].cols();
        for v in &vals {
            if v.rank() != 2 || v.cols() != cols {
                return Err(Error::dim("concat_rows", vals[0].shape(), v.shape()));
            }
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let data = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
        Tensor::new(vec![rows, cols], data)?
    };
    Ok(tape.push(
        value,
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        "concat_rows",
    ))
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    leaf_grads: HashMap<usize, Tensor>,
    shapes: Vec<Vec<usize>>,
    bindings: Vec<ParamBinding>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.leaf_grads
            .get(&var.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }

    /// Gradients of every parameter bound on the tape, in binding order.
    pub fn params(&self) -> Vec<(String, ParamGrad)> {
        self.bindings
            .iter()
            .map(|b| {
                let values = self
                    .leaf_grads
                    .get(&b.node)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[b.node]));
                let grad = match &b.rows {
                    None => ParamGrad::Dense(values),
                    Some(rows) => ParamGrad::Rows {
                        rows: rows.clone(),
                        values,
                    },
                };
                (b.name.clone(), grad)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn leaky_relu_values_and_kink() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-1.0, 0.0, 2.0, -3.0]));
        let y = x.leaky_relu(0.2).unwrap();
        assert_eq!(y.value().data(), &[-0.2, 0.0, 2.0, -0.6000000000000001]);
        let g = tape.backward(y.sum().unwrap()).unwrap().wrt(x);
        assert_eq!(g.data(), &[0.2, 1.0, 1.0, 0.2]);
    }

    #[test]
    fn leaky_relu_positive_input_unchanged() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.5, 1.0, 7.0]));
        assert_eq!(x.leaky_relu(0.2).unwrap().value().data(), &[0.5, 1.0, 7.0]);
    }

    #[test]
    fn leaky_relu_rejects_bad_slope() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0]));
        assert!(x.leaky_relu(1.5).is_err());
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::row(&[4.0, 4.0, 4.0])).softmax().unwrap();
        for v in s.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = tape.constant(Tensor::row(&[-12.0])).softmax().unwrap();
        assert_eq!(one.value().data(), &[1.0]);
        let big = tape.constant(Tensor::row(&[1000.0, 0.0])).softmax().unwrap();
        assert_eq!(big.value().data(), &[1.0, 0.0]);
        assert!(tape.check_finite().is_ok());
    }

    #[test]
    fn softmax_empty_axis_errors() {
        let tape = Tape::new();
        let e = tape.constant(Tensor::zeros(&[1, 0]));
        assert!(e.softmax().is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[1, 12]));
        let l = uniform.cross_entropy(&[3]).unwrap().value().item();
        assert!((l - 12f64.ln()).abs() < 1e-12);
        assert!((l - 2.4849).abs() < 1e-4);

        let mut row = vec![0.0; 12];
        row[5] = 30.0;
        let sure = tape.constant(Tensor::row(&row));
        assert!(sure.cross_entropy(&[5]).unwrap().value().item() < 1e-9);
    }

    #[test]
    fn cross_entropy_out_of_range_label() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 12]));
        match x.cross_entropy(&[12]) {
            Err(Error::LabelOutOfRange { index: 12, classes: 12 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sum_gradient_is_ones_and_unused_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let y = tape.leaf(Tensor::row(&[9.0, 9.0]));
        let grads = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0; 4]);
        assert_eq!(grads.wrt(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_poisons_tape() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[f64::MAX, f64::MAX]));
        let y = x.scale(10.0).unwrap().sum().unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x ⊙ x) → grad 2x
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.5, -2.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        assert_eq!(tape.backward(loss).unwrap().wrt(x).data(), &[3.0, -4.0]);
    }

    #[test]
    fn param_rows_gradient_is_row_sparse() {
        let mut store = ParamStore::new();
        store.insert("emb", t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]));
        let tape = Tape::new();
        let rows = tape.param_rows(&store, "emb", &[2, 0, 2]).unwrap();
        let loss = rows.sum().unwrap();
        let grads = tape.backward(loss).unwrap().params();
        assert_eq!(grads.len(), 1);
        match &grads[0].1 {
            ParamGrad::Rows { rows, values } => {
                assert_eq!(rows, &[0, 2]);
                assert_eq!(values.data(), &[1.0, 1.0, 2.0, 2.0]);
            }
            ParamGrad::Dense(_) => panic!("expected sparse rows"),
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 5.0], vec![2.0, 2.0]]));
        let mask: Rc<[bool]> = vec![true, false, true, true].into();
        let y = x.masked_softmax(mask).unwrap().value();
        assert_eq!(y.data(), &[1.0, 0.0, 0.5, 0.5]);
    }
}
