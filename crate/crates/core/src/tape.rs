//! Reverse-mode automatic differentiation over scalars and dense 2-D fields.
//!
//! Operations are recorded on an append-only tape during the forward pass.
//! Node ids are dense and strictly increasing, and every node's inputs have
//! smaller ids, so one sweep in decreasing id order is a valid reverse
//! topological traversal. `backward` keeps its adjoint buffers local to the
//! call, which leaves the tape intact and reusable for further recording or a
//! second backward pass.
//!
//! Arithmetic is `f64` throughout. Broadcasting is limited to scalar-with-
//! field; the elementwise binaries accept either two equal shapes or a scalar
//! on one side.

use std::collections::HashMap;
use std::fmt;

use crate::field::Field2D;

pub type NodeId = usize;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Scalar,
    Field { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Field { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Shape::Scalar)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Field { rows, cols } => write!(f, "{rows}x{cols}"),
        }
    }
}

/// Handle to a tape node: id plus shape, cheap to copy around.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    pub id: NodeId,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    DivisionByZero {
        index: usize,
    },
    SqrtOfNegative {
        index: usize,
        value: f64,
    },
    SliceOutOfBounds {
        shape: Shape,
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    },
    NonScalarLoss {
        shape: Shape,
    },
    UnknownNode {
        id: NodeId,
    },
    NonFinite {
        op: &'static str,
        index: usize,
        value: f64,
    },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left} and {right}")
            }
            TapeError::DivisionByZero { index } => {
                write!(f, "division by exact zero at element {index}")
            }
            TapeError::SqrtOfNegative { index, value } => {
                write!(f, "sqrt of negative value {value} at element {index}")
            }
            TapeError::SliceOutOfBounds {
                shape,
                r0,
                c0,
                rows,
                cols,
            } => write!(
                f,
                "slice [{r0}..{}, {c0}..{}] outside {shape}",
                r0 + rows,
                c0 + cols
            ),
            TapeError::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got {shape}")
            }
            TapeError::UnknownNode { id } => write!(f, "node id {id} is not on this tape"),
            TapeError::NonFinite { op, index, value } => {
                write!(f, "{op} produced non-finite value {value} at element {index}")
            }
        }
    }
}

impl std::error::Error for TapeError {}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product; one side may be a scalar broadcast over a field.
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Neg(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    Slice {
        a: NodeId,
        r0: usize,
        c0: usize,
    },
    PadZero {
        a: NodeId,
        top: usize,
        left: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Adjoints for an explicit set of parameter nodes, shaped like their forward
/// values.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    by_id: HashMap<NodeId, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_id.get(&id).map(|v| v.as_slice())
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.by_id[&id][0]
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Existing `Var` handles become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, value });
        Var { id, shape }
    }

    fn check_finite(op: &'static str, value: &[f64]) -> Result<(), TapeError> {
        for (index, &v) in value.iter().enumerate() {
            if !v.is_finite() {
                return Err(TapeError::NonFinite { op, index, value: v });
            }
        }
        Ok(())
    }

    pub fn leaf_scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, Shape::Scalar, vec![v])
    }

    pub fn leaf_field(&mut self, f: &Field2D) -> Var {
        self.push(
            Op::Leaf,
            Shape::Field {
                rows: f.nx(),
                cols: f.ny(),
            },
            f.values().to_vec(),
        )
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert!(v.shape.is_scalar());
        self.nodes[v.id].value[0]
    }

    pub fn field_value(&self, v: Var) -> Field2D {
        match v.shape {
            Shape::Field { rows, cols } => {
                Field2D::from_vec(rows, cols, self.nodes[v.id].value.clone())
            }
            Shape::Scalar => panic!("scalar node has no field value"),
        }
    }

    // ---- elementwise binaries --------------------------------------------

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<Var, TapeError> {
        let (shape, value) = match (a.shape, b.shape) {
            (Shape::Scalar, Shape::Scalar) => {
                let x = self.nodes[a.id].value[0];
                let y = self.nodes[b.id].value[0];
                (Shape::Scalar, vec![f(x, y)])
            }
            (sa, sb) if sa == sb => {
                let out = self.nodes[a.id]
                    .value
                    .iter()
                    .zip(&self.nodes[b.id].value)
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                (sa, out)
            }
            (Shape::Scalar, sb @ Shape::Field { .. }) => {
                let x = self.nodes[a.id].value[0];
                let out = self.nodes[b.id].value.iter().map(|&y| f(x, y)).collect();
                (sb, out)
            }
            (sa @ Shape::Field { .. }, Shape::Scalar) => {
                let y = self.nodes[b.id].value[0];
                let out = self.nodes[a.id].value.iter().map(|&x| f(x, y)).collect();
                (sa, out)
            }
            (left, right) => {
                return Err(TapeError::ShapeMismatch {
                    op: op_name,
                    left,
                    right,
                })
            }
        };
        Self::check_finite(op_name, &value)?;
        Ok(self.push(make(a.id, b.id), shape, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        if let Some(index) = self.nodes[b.id].value.iter().position(|&y| y == 0.0) {
            return Err(TapeError::DivisionByZero { index });
        }
        self.elementwise("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (m, k, k2, n) = match (a.shape, b.shape) {
            (Shape::Field { rows: m, cols: k }, Shape::Field { rows: k2, cols: n }) => {
                (m, k, k2, n)
            }
            (left, right) => {
                return Err(TapeError::ShapeMismatch {
                    op: "matmul",
                    left,
                    right,
                })
            }
        };
        if k != k2 {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                left: a.shape,
                right: b.shape,
            });
        }
        let av = &self.nodes[a.id].value;
        let bv = &self.nodes[b.id].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let x = av[i * k + kk];
                for j in 0..n {
                    out[i * n + j] += x * bv[kk * n + j];
                }
            }
        }
        Self::check_finite("matmul", &out)?;
        Ok(self.push(
            Op::MatMul(a.id, b.id),
            Shape::Field { rows: m, cols: n },
            out,
        ))
    }

    // ---- unaries ----------------------------------------------------------

    fn map_unary(
        &mut self,
        op_name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        make: impl Fn(NodeId) -> Op,
    ) -> Result<Var, TapeError> {
        let value: Vec<f64> = self.nodes[a.id].value.iter().map(|&x| f(x)).collect();
        Self::check_finite(op_name, &value)?;
        Ok(self.push(make(a.id), a.shape, value))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TapeError> {
        self.map_unary("neg", a, |x| -x, Op::Neg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TapeError> {
        self.map_unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TapeError> {
        self.map_unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TapeError> {
        if let Some(index) = self.nodes[a.id].value.iter().position(|&x| x < 0.0) {
            return Err(TapeError::SqrtOfNegative {
                index,
                value: self.nodes[a.id].value[index],
            });
        }
        self.map_unary("sqrt", a, f64::sqrt, Op::Sqrt)
    }

    /// Copies the `rows x cols` submatrix starting at `(r0, c0)`.
    pub fn slice(
        &mut self,
        a: Var,
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Var, TapeError> {
        let (ar, ac) = match a.shape {
            Shape::Field { rows, cols } => (rows, cols),
            Shape::Scalar => {
                return Err(TapeError::SliceOutOfBounds {
                    shape: a.shape,
                    r0,
                    c0,
                    rows,
                    cols,
                })
            }
        };
        if rows == 0 || cols == 0 || r0 + rows > ar || c0 + cols > ac {
            return Err(TapeError::SliceOutOfBounds {
                shape: a.shape,
                r0,
                c0,
                rows,
                cols,
            });
        }
        let av = &self.nodes[a.id].value;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let base = (r0 + r) * ac + c0;
            out.extend_from_slice(&av[base..base + cols]);
        }
        Ok(self.push(Op::Slice { a: a.id, r0, c0 }, Shape::Field { rows, cols }, out))
    }

    /// Embeds a field into a larger zero field with the given margins.
    pub fn pad_zero(
        &mut self,
        a: Var,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Result<Var, TapeError> {
        let (ar, ac) = match a.shape {
            Shape::Field { rows, cols } => (rows, cols),
            Shape::Scalar => {
                return Err(TapeError::ShapeMismatch {
                    op: "pad-zero",
                    left: a.shape,
                    right: a.shape,
                })
            }
        };
        let rows = ar + top + bottom;
        let cols = ac + left + right;
        let av = &self.nodes[a.id].value;
        let mut out = vec![0.0; rows * cols];
        for r in 0..ar {
            let dst = (top + r) * cols + left;
            out[dst..dst + ac].copy_from_slice(&av[r * ac..(r + 1) * ac]);
        }
        Ok(self.push(
            Op::PadZero { a: a.id, top, left },
            Shape::Field { rows, cols },
            out,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TapeError> {
        let s: f64 = self.nodes[a.id].value.iter().sum();
        Self::check_finite("sum", &[s])?;
        Ok(self.push(Op::Sum(a.id), Shape::Scalar, vec![s]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TapeError> {
        let n = self.nodes[a.id].value.len() as f64;
        let s: f64 = self.nodes[a.id].value.iter().sum::<f64>() / n;
        Self::check_finite("mean", &[s])?;
        Ok(self.push(Op::Mean(a.id), Shape::Scalar, vec![s]))
    }

    /// Pairs every cell with its x-neighbor: returns the two `(rows-1) x cols`
    /// fields holding cell `i` and cell `i+1` of each vertical-adjacent pair.
    pub fn stack_adjacent_x(&mut self, a: Var) -> Result<(Var, Var), TapeError> {
        let (rows, cols) = match a.shape {
            Shape::Field { rows, cols } => (rows, cols),
            Shape::Scalar => {
                return Err(TapeError::SliceOutOfBounds {
                    shape: a.shape,
                    r0: 0,
                    c0: 0,
                    rows: 0,
                    cols: 0,
                })
            }
        };
        let lo = self.slice(a, 0, 0, rows - 1, cols)?;
        let hi = self.slice(a, 1, 0, rows - 1, cols)?;
        Ok((lo, hi))
    }

    /// Same pairing along y: two `rows x (cols-1)` fields.
    pub fn stack_adjacent_y(&mut self, a: Var) -> Result<(Var, Var), TapeError> {
        let (rows, cols) = match a.shape {
            Shape::Field { rows, cols } => (rows, cols),
            Shape::Scalar => {
                return Err(TapeError::SliceOutOfBounds {
                    shape: a.shape,
                    r0: 0,
                    c0: 0,
                    rows: 0,
                    cols: 0,
                })
            }
        };
        let lo = self.slice(a, 0, 0, rows, cols - 1)?;
        let hi = self.slice(a, 0, 1, rows, cols - 1)?;
        Ok((lo, hi))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Adjoints accumulate additively over
    /// all paths; the returned map holds exactly the requested ids, with zero
    /// buffers for parameters the loss does not depend on.
    pub fn backward(&self, loss: Var, wrt: &[NodeId]) -> Result<Grads, TapeError> {
        if !loss.shape.is_scalar() {
            return Err(TapeError::NonScalarLoss { shape: loss.shape });
        }
        if loss.id >= self.nodes.len() {
            return Err(TapeError::UnknownNode { id: loss.id });
        }
        for &id in wrt {
            if id >= self.nodes.len() {
                return Err(TapeError::UnknownNode { id });
            }
        }

        let wrt_set: std::collections::HashSet<NodeId> = wrt.iter().copied().collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let out_adj = match adj[id].take() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[id];
            match node.op {
                Op::Leaf => {
                    // Terminal: keep the adjoint for gradient collection.
                    adj[id] = Some(out_adj);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate_broadcast(&mut adj, a, &out_adj, |_, adj_i| adj_i);
                    self.accumulate_broadcast(&mut adj, b, &out_adj, |_, adj_i| adj_i);
                }
                Op::Sub(a, b) => {
                    self.accumulate_broadcast(&mut adj, a, &out_adj, |_, adj_i| adj_i);
                    self.accumulate_broadcast(&mut adj, b, &out_adj, |_, adj_i| -adj_i);
                }
                Op::Mul(a, b) => {
                    let bv = &self.nodes[b].value;
                    let av = &self.nodes[a].value;
                    self.accumulate_broadcast(&mut adj, a, &out_adj, |i, adj_i| {
                        adj_i * bv[i % bv.len()]
                    });
                    self.accumulate_broadcast(&mut adj, b, &out_adj, |i, adj_i| {
                        adj_i * av[i % av.len()]
                    });
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b].value;
                    let cv = &node.value;
                    self.accumulate_broadcast(&mut adj, a, &out_adj, |i, adj_i| {
                        adj_i / bv[i % bv.len()]
                    });
                    self.accumulate_broadcast(&mut adj, b, &out_adj, |i, adj_i| {
                        -adj_i * cv[i] / bv[i % bv.len()]
                    });
                }
                Op::MatMul(a, b) => {
                    let (m, k) = match self.nodes[a].shape {
                        Shape::Field { rows, cols } => (rows, cols),
                        Shape::Scalar => unreachable!("matmul operands are fields"),
                    };
                    let n = match self.nodes[b].shape {
                        Shape::Field { cols, .. } => cols,
                        Shape::Scalar => unreachable!("matmul operands are fields"),
                    };
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    {
                        let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                        for i in 0..m {
                            for j in 0..n {
                                let g = out_adj[i * n + j];
                                for kk in 0..k {
                                    da[i * k + kk] += g * bv[kk * n + j];
                                }
                            }
                        }
                    }
                    {
                        let db = Self::slot(&mut adj, self.nodes[b].shape, b);
                        for i in 0..m {
                            for j in 0..n {
                                let g = out_adj[i * n + j];
                                for kk in 0..k {
                                    db[kk * n + j] += g * av[i * k + kk];
                                }
                            }
                        }
                    }
                }
                Op::Neg(a) => {
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for (d, &g) in da.iter_mut().zip(&out_adj) {
                        *d -= g;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for ((d, &g), &yi) in da.iter_mut().zip(&out_adj).zip(y) {
                        *d += g * (1.0 - yi * yi);
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a].value;
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for ((d, &g), &xi) in da.iter_mut().zip(&out_adj).zip(x) {
                        if xi > 0.0 {
                            *d += g;
                        }
                    }
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for ((d, &g), &yi) in da.iter_mut().zip(&out_adj).zip(y) {
                        *d += g / (2.0 * yi);
                    }
                }
                Op::Slice { a, r0, c0 } => {
                    let (rows, cols) = match node.shape {
                        Shape::Field { rows, cols } => (rows, cols),
                        Shape::Scalar => unreachable!("slice output is a field"),
                    };
                    let ac = match self.nodes[a].shape {
                        Shape::Field { cols, .. } => cols,
                        Shape::Scalar => unreachable!("slice input is a field"),
                    };
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for r in 0..rows {
                        let base = (r0 + r) * ac + c0;
                        for c in 0..cols {
                            da[base + c] += out_adj[r * cols + c];
                        }
                    }
                }
                Op::PadZero { a, top, left } => {
                    let (ar, ac) = match self.nodes[a].shape {
                        Shape::Field { rows, cols } => (rows, cols),
                        Shape::Scalar => unreachable!("pad input is a field"),
                    };
                    let cols = match node.shape {
                        Shape::Field { cols, .. } => cols,
                        Shape::Scalar => unreachable!("pad output is a field"),
                    };
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for r in 0..ar {
                        let src = (top + r) * cols + left;
                        for c in 0..ac {
                            da[r * ac + c] += out_adj[src + c];
                        }
                    }
                }
                Op::Sum(a) => {
                    let g = out_adj[0];
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for d in da.iter_mut() {
                        *d += g;
                    }
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].value.len() as f64;
                    let g = out_adj[0] / n;
                    let da = Self::slot(&mut adj, self.nodes[a].shape, a);
                    for d in da.iter_mut() {
                        *d += g;
                    }
                }
            }
            if wrt_set.contains(&id) {
                adj[id] = Some(out_adj);
            }
        }

        let mut grads = Grads::default();
        for &id in wrt {
            let buf = adj[id]
                .take()
                .unwrap_or_else(|| vec![0.0; self.nodes[id].shape.len()]);
            grads.by_id.insert(id, buf);
        }
        Ok(grads)
    }

    fn slot(adj: &mut [Option<Vec<f64>>], shape: Shape, id: NodeId) -> &mut Vec<f64> {
        adj[id].get_or_insert_with(|| vec![0.0; shape.len()])
    }

    /// Adds `weight(i, out_adj[i])` into the input adjoint, reducing over the
    /// output when the input is a broadcast scalar.
    fn accumulate_broadcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        input: NodeId,
        out_adj: &[f64],
        weight: impl Fn(usize, f64) -> f64,
    ) {
        let shape = self.nodes[input].shape;
        let da = Self::slot(adj, shape, input);
        if shape.len() == out_adj.len() {
            for (i, d) in da.iter_mut().enumerate() {
                *d += weight(i, out_adj[i]);
            }
        } else {
            debug_assert_eq!(shape.len(), 1);
            let mut acc = 0.0;
            for (i, &g) in out_adj.iter().enumerate() {
                acc += weight(i, g);
            }
            da[0] += acc;
        }
    }
}
