//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is a define-by-run Wengert list: every operation is appended
//! with its forward value, and [`Tape::backward`] sweeps the list once in
//! reverse to accumulate adjoints. The tape is rebuilt for every loss
//! evaluation.
//!
//! Tensors are row-major. Matrix-shaped operations treat a tensor as
//! `rows x cols` with `shape = [rows, cols]`; reductions produce rank-0
//! scalars (`shape = []`, one element).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value {value} produced by {op} at node {node}, element {index}")]
    NonFinite {
        op: &'static str,
        node: usize,
        index: usize,
        value: f64,
    },
    #[error("backward needs a scalar loss but node {node} has shape {shape:?}")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("row slice {start}..{end} out of bounds for {rows} rows")]
    SliceOutOfBounds { start: usize, end: usize, rows: usize },
}

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    /// Column vector (`n x 1`).
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }
}

/// Reference to a node recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds. Inputs are earlier nodes on the same tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Constant input; receives an adjoint but is not reported as a parameter.
    Constant,
    /// Trainable leaf.
    Param,
    MatMul(Var, Var),
    /// Elementwise add; the right operand may be a `1 x cols` row broadcast
    /// over the rows of the left operand.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Neg(Var),
    /// Multiply by a constant (division by a scalar is `Scale(x, 1/c)`).
    Scale(Var, f64),
    /// Add a constant to every element.
    Offset(Var, f64),
    /// Sum of all elements, sequential in index order.
    Sum(Var),
    Mean(Var),
    /// Rows `start..start + len` of a matrix.
    SliceRows(Var, usize, usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SliceRows(..) => "slice_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                vec![a, b]
            }
            Op::Tanh(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceRows(a, _, _) => vec![a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation. Nodes are stored in topological order by
/// construction: an operation can only reference nodes that already exist.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.record(Op::Constant, value)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.record(Op::Param, value)
    }

    /// Append a node whose forward value was computed by the caller.
    ///
    /// The value's shape is checked against the shape implied by `op` and
    /// its inputs, and every element must be finite.
    pub fn record(&mut self, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        for input in op.inputs() {
            if input.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(input.0));
            }
        }
        if let Some(expected) = self.infer_shape(&op)? {
            if expected != value.shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: op.name(),
                    lhs: expected,
                    rhs: value.shape.clone(),
                });
            }
        }
        if let Some((index, &bad)) = value.data.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
                index,
                value: bad,
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn infer_shape(&self, op: &Op) -> Result<Option<Vec<usize>>, AutodiffError> {
        let shape = |v: &Var| self.nodes[v.0].value.shape.clone();
        let out = match op {
            Op::Constant | Op::Param => return Ok(None),
            Op::MatMul(a, b) => {
                let (sa, sb) = (shape(a), shape(b));
                match (sa.as_slice(), sb.as_slice()) {
                    ([m, k1], [k2, n]) if k1 == k2 => vec![*m, *n],
                    _ => {
                        return Err(AutodiffError::ShapeMismatch {
                            op: op.name(),
                            lhs: sa,
                            rhs: sb,
                        })
                    }
                }
            }
            Op::Add(a, b) => {
                let (sa, sb) = (shape(a), shape(b));
                let broadcast_row = matches!(
                    (sa.as_slice(), sb.as_slice()),
                    ([_, c1], [1, c2]) if c1 == c2
                );
                if sa != sb && !broadcast_row {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        lhs: sa,
                        rhs: sb,
                    });
                }
                sa
            }
            Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (sa, sb) = (shape(a), shape(b));
                if sa != sb {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        lhs: sa,
                        rhs: sb,
                    });
                }
                sa
            }
            Op::Tanh(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _) => shape(a),
            Op::Sum(_) | Op::Mean(_) => vec![],
            Op::SliceRows(a, start, len) => {
                let sa = shape(a);
                let rows = match sa.as_slice() {
                    [r, _] => *r,
                    _ => {
                        return Err(AutodiffError::ShapeMismatch {
                            op: op.name(),
                            lhs: sa,
                            rhs: vec![*start, *len],
                        })
                    }
                };
                if start + len > rows {
                    return Err(AutodiffError::SliceOutOfBounds {
                        start: *start,
                        end: start + len,
                        rows,
                    });
                }
                vec![*len, sa[1]]
            }
        };
        Ok(Some(out))
    }

    /// Compute the forward value of `op` and record it.
    pub fn apply(&mut self, op: Op) -> Result<Var, AutodiffError> {
        for input in op.inputs() {
            if input.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(input.0));
            }
        }
        // Shape validation happens before any arithmetic touches the data.
        let shape = self.infer_shape(&op)?.expect("apply is only used for derived nodes");
        let data = self.forward_data(&op, &shape);
        self.record(op, Tensor { shape, data })
    }

    fn forward_data(&self, op: &Op, shape: &[usize]) -> Vec<f64> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Constant | Op::Param => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, &ta.data, false, &tb.data, false, &mut out);
                out
            }
            Op::Add(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if ta.shape == tb.shape {
                    zip_map(&ta.data, &tb.data, |x, y| x + y)
                } else {
                    let cols = tb.data.len();
                    ta.data.iter().enumerate().map(|(i, x)| x + tb.data[i % cols]).collect()
                }
            }
            Op::Sub(a, b) => zip_map(&val(a).data, &val(b).data, |x, y| x - y),
            Op::Mul(a, b) => zip_map(&val(a).data, &val(b).data, |x, y| x * y),
            Op::Div(a, b) => zip_map(&val(a).data, &val(b).data, |x, y| x / y),
            Op::Tanh(a) => val(a).data.iter().map(|x| x.tanh()).collect(),
            Op::Exp(a) => val(a).data.iter().map(|x| x.exp()).collect(),
            Op::Square(a) => val(a).data.iter().map(|x| x * x).collect(),
            Op::Sqrt(a) => val(a).data.iter().map(|x| x.sqrt()).collect(),
            Op::Neg(a) => val(a).data.iter().map(|x| -x).collect(),
            Op::Scale(a, c) => val(a).data.iter().map(|x| c * x).collect(),
            Op::Offset(a, c) => val(a).data.iter().map(|x| x + c).collect(),
            Op::Sum(a) => vec![seq_sum(&val(a).data)],
            Op::Mean(a) => {
                let d = &val(a).data;
                vec![seq_sum(d) / d.len() as f64]
            }
            Op::SliceRows(a, start, _) => {
                let ta = val(a);
                let cols = ta.shape[1];
                let rows = shape[0];
                ta.data[start * cols..(start + rows) * cols].to_vec()
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Div(a, b))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Tanh(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Exp(a))
    }
    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Square(a))
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Sqrt(a))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Op::Scale(a, c))
    }
    pub fn div_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Op::Scale(a, 1.0 / c))
    }
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Op::Offset(a, c))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Op::Mean(a))
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.apply(Op::SliceRows(a, start, len))
    }

    /// Mean of squared entries, the building block of every loss term.
    pub fn mean_square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let sq = self.square(a)?;
        self.mean(sq)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(AutodiffError::UnknownNode(loss.0));
        };
        if !node.value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                node: loss.0,
                shape: node.value.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: &Var| &self.nodes[v.0].value;
            match node.op {
                Op::Constant | Op::Param => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(&a), val(&b));
                    let (m, k) = ta.dims2().unwrap();
                    let n = tb.dims2().unwrap().1;
                    // dA = G * B^T, dB = A^T * G
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, &tb.data, true, &mut da);
                    let mut db = vec![0.0; k * n];
                    gemm_at_b(m, k, n, &ta.data, &g, &mut db);
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                Op::Add(a, b) => {
                    let (ta, tb) = (val(&a), val(&b));
                    if ta.shape == tb.shape {
                        accumulate(&mut adj, b, g.clone());
                    } else {
                        let cols = tb.data.len();
                        let mut db = vec![0.0; cols];
                        for (i, gi) in g.iter().enumerate() {
                            db[i % cols] += gi;
                        }
                        accumulate(&mut adj, b, db);
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, b, g.iter().map(|x| -x).collect());
                    accumulate(&mut adj, a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(&a), val(&b));
                    accumulate(&mut adj, a, zip_map(&g, &tb.data, |gi, y| gi * y));
                    accumulate(&mut adj, b, zip_map(&g, &ta.data, |gi, x| gi * x));
                }
                Op::Div(a, b) => {
                    let tb = val(&b);
                    let out = &node.value.data;
                    accumulate(&mut adj, a, zip_map(&g, &tb.data, |gi, y| gi / y));
                    let db = g
                        .iter()
                        .zip(out)
                        .zip(&tb.data)
                        .map(|((gi, q), y)| -gi * q / y)
                        .collect();
                    accumulate(&mut adj, b, db);
                }
                Op::Tanh(a) => {
                    let t = &node.value.data;
                    accumulate(&mut adj, a, zip_map(&g, t, |gi, t| gi * (1.0 - t * t)));
                }
                Op::Exp(a) => {
                    accumulate(&mut adj, a, zip_map(&g, &node.value.data, |gi, e| gi * e));
                }
                Op::Square(a) => {
                    accumulate(&mut adj, a, zip_map(&g, &val(&a).data, |gi, x| 2.0 * gi * x));
                }
                Op::Sqrt(a) => {
                    accumulate(&mut adj, a, zip_map(&g, &node.value.data, |gi, r| 0.5 * gi / r));
                }
                Op::Neg(a) => accumulate(&mut adj, a, g.iter().map(|x| -x).collect()),
                Op::Scale(a, c) => accumulate(&mut adj, a, g.iter().map(|x| c * x).collect()),
                Op::Offset(a, _) => accumulate(&mut adj, a, g),
                Op::Sum(a) => {
                    let n = val(&a).numel();
                    accumulate(&mut adj, a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = val(&a).numel();
                    accumulate(&mut adj, a, vec![g[0] / n as f64; n]);
                }
                Op::SliceRows(a, start, _) => {
                    let ta = val(&a);
                    let cols = ta.shape[1];
                    let entry = adj[a.0].get_or_insert_with(|| vec![0.0; ta.numel()]);
                    for (dst, src) in entry[start * cols..].iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
            }
        }

        let shapes = self.nodes[..=loss.0].iter().map(|n| n.value.shape.clone()).collect();
        let params = self.nodes[..=loss.0]
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == Op::Param)
            .map(|(i, _)| Var(i))
            .collect();
        Ok(Gradients {
            adjoints: adj,
            shapes,
            params,
        })
    }
}

/// Result of a reverse sweep. Adjoints are retained for leaf nodes
/// (parameters and constants); intermediate adjoints are released during
/// the sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Adjoint of `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.adjoints.get(v.0) {
            Some(Some(a)) => Tensor {
                shape: self.shapes[v.0].clone(),
                data: a.clone(),
            },
            Some(None) => Tensor::zeros(self.shapes[v.0].clone()),
            // Nodes recorded after the loss cannot affect it.
            None => Tensor::scalar(0.0),
        }
    }

    /// Borrow the raw adjoint buffer, `None` when the adjoint is zero.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }

    /// Gradient map over all parameter nodes.
    pub fn params(&self) -> impl Iterator<Item = (Var, Tensor)> + '_ {
        self.params.iter().map(|&p| (p, self.wrt(p)))
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn seq_sum(d: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in d {
        s += x;
    }
    s
}

/// `C = op(A) * op(B)` for `op(A): m x k`, `op(B): k x n`, C row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the strided extents computed from m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C (k x n) = A^T * G` with `A: m x k`, `G: m x n`.
fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], g: &[f64], c: &mut [f64]) {
    gemm(k, m, n, a, true, g, false, c);
}
