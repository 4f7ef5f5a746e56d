//! Dense 2-D tensors, a reverse-mode autodiff tape and the Adam optimizer.
//!
//! Values live on a [`Tape`] and are referred to by [`Var`] handles. Nodes
//! are appended in evaluation order, so walking the tape backwards from the
//! loss is a valid reverse topological order.

use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {rows}x{cols} for {len} values")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    Mismatch {
        op: &'static str,
        a: [usize; 2],
        b: [usize; 2],
    },
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("backward already ran on this tape; rebuild the forward pass")]
    AlreadyBackpropagated,
    #[error("dropout probability must lie in [0, 1), got {0}")]
    DropoutProbability(f64),
    #[error("cosine of two zero vectors is undefined")]
    ZeroVectors,
    #[error("row index {index} out of range for {rows} rows")]
    RowIndex { index: usize, rows: usize },
    #[error("learning rate must be positive, got {0}")]
    LearningRate(f64),
    #[error("non-finite gradient entry")]
    NonFiniteGradient,
}

type Result<T> = std::result::Result<T, TensorError>;

/// Row-major matrix of f64. Vectors are `1 x n`, scalars `1 x 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TensorError::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols]).expect("positive shape")
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values.len(), values)
    }

    pub fn column(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), 1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Shape {
                rows: rows.len(),
                cols,
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(TensorError::Mismatch {
                op: "matmul",
                a: self.shape(),
                b: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let o = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for (dst, b) in o.iter_mut().zip(&other.data[p * m..(p + 1) * m]) {
                    *dst += a * b;
                }
            }
        }
        Tensor::new(n, m, out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant sparse operator: row `i` of the output is `Σ w · x[j]` over the
/// `(j, w)` entries of `rows[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub in_rows: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(in_rows: usize, out_rows: usize) -> Self {
        Self {
            in_rows,
            rows: vec![Vec::new(); out_rows],
        }
    }

    pub fn push(&mut self, out_row: usize, in_row: usize, weight: f64) {
        self.rows[out_row].push((in_row, weight));
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows.len().max(1), self.in_rows.max(1));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                t.data[i * self.in_rows + j] += w;
            }
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    CosineRows(Var, Var),
    Mask(Var, Vec<f64>),
    Propagate(Var, Rc<SparseRows>),
    PropagateMax(Var, Rc<SparseRows>, Vec<Option<(usize, f64)>>),
    SquaredError(Var, Tensor, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backpropagated: bool,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence it.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| {
            let [r, c] = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, "param").expect("finite parameter")
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, "constant").expect("finite constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::Mismatch { op, a: sa, b: sb });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg, "relu")
    }

    /// Column means as a `1 x cols` tensor.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = x.rows as f64;
        let out = Tensor::row_vector(out.into_iter().map(|v| v / n).collect())?;
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg, "mean_rows")
    }

    pub fn select_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(index.len() * x.cols);
        for &i in index {
            if i >= x.rows {
                return Err(TensorError::RowIndex {
                    index: i,
                    rows: x.rows,
                });
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(index.len(), x.cols, data)?;
        let rg = self.rg(a);
        self.push(out, Op::SelectRows(a, index.to_vec()), rg, "select_rows")
    }

    /// Row-wise cosine similarity of two equally shaped matrices, as an
    /// `rows x 1` column. Rows where either side has zero norm yield 0 and
    /// pass no gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out: Vec<f64> = (0..x.rows)
            .map(|r| crate::embedding::cosine_slices(x.row(r), y.row(r)))
            .collect();
        let out = Tensor::column(out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::CosineRows(a, b), rg, "cosine")
    }

    /// Differentiable cosine of two vectors of equal length.
    pub fn cosine_node(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine", a, b)?;
        let zero = |t: &Tensor| t.data.iter().all(|&v| v == 0.0);
        if zero(self.value(a)) && zero(self.value(b)) {
            return Err(TensorError::ZeroVectors);
        }
        if self.value(a).rows != 1 {
            return Err(TensorError::Mismatch {
                op: "cosine_node expects row vectors",
                a: self.value(a).shape(),
                b: self.value(b).shape(),
            });
        }
        self.cosine_rows(a, b)
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::DropoutProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).data.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let out = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        let rg = self.rg(a);
        self.push(out, Op::Mask(a, mask), rg, "dropout")
    }

    /// Weighted neighbor sum through a constant sparse operator.
    pub fn propagate(&mut self, x: Var, op: &Rc<SparseRows>) -> Result<Var> {
        let v = self.value(x);
        if v.rows != op.in_rows {
            return Err(TensorError::Mismatch {
                op: "propagate",
                a: [op.rows.len(), op.in_rows],
                b: v.shape(),
            });
        }
        let cols = v.cols;
        let mut out = vec![0.0; op.rows.len() * cols];
        for (i, row) in op.rows.iter().enumerate() {
            let o = &mut out[i * cols..(i + 1) * cols];
            for &(j, w) in row {
                for (dst, s) in o.iter_mut().zip(v.row(j)) {
                    *dst += w * s;
                }
            }
        }
        let out = Tensor::new(op.rows.len(), cols, out)?;
        let rg = self.rg(x);
        self.push(out, Op::Propagate(x, Rc::clone(op)), rg, "propagate")
    }

    /// Elementwise max of weighted neighbor messages; rows without
    /// neighbors are zero.
    pub fn propagate_max(&mut self, x: Var, op: &Rc<SparseRows>) -> Result<Var> {
        let v = self.value(x);
        if v.rows != op.in_rows {
            return Err(TensorError::Mismatch {
                op: "propagate_max",
                a: [op.rows.len(), op.in_rows],
                b: v.shape(),
            });
        }
        let cols = v.cols;
        let mut out = vec![0.0; op.rows.len() * cols];
        let mut arg = vec![None; op.rows.len() * cols];
        for (i, row) in op.rows.iter().enumerate() {
            for c in 0..cols {
                let mut best: Option<(usize, f64, f64)> = None;
                for &(j, w) in row {
                    let m = w * v.get(j, c);
                    if best.is_none_or(|(_, _, b)| m > b) {
                        best = Some((j, w, m));
                    }
                }
                if let Some((j, w, m)) = best {
                    out[i * cols + c] = m;
                    arg[i * cols + c] = Some((j, w));
                }
            }
        }
        let out = Tensor::new(op.rows.len(), cols, out)?;
        let rg = self.rg(x);
        self.push(out, Op::PropagateMax(x, Rc::clone(op), arg), rg, "propagate_max")
    }

    /// Squared error between a prediction column and a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor, reduction: Reduction) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(TensorError::Mismatch {
                op: "mse",
                a: p.shape(),
                b: target.shape(),
            });
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / p.data.len() as f64,
        };
        let sse: f64 = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(pred);
        self.push(
            Tensor::scalar(sse * scale),
            Op::SquaredError(pred, target.clone(), scale),
            rg,
            "mse",
        )
    }

    /// Reverse pass from a scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        if self.backpropagated {
            return Err(TensorError::AlreadyBackpropagated);
        }
        self.backpropagated = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGradient);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = g.matmul(&vb.transpose()).expect("shapes checked in forward");
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = va.transpose().matmul(g).expect("shapes checked in forward");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = Tensor {
                    data: g.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect(),
                    ..g.clone()
                };
                let gb = Tensor {
                    data: g.data.iter().zip(&va.data).map(|(g, x)| g * x).collect(),
                    ..g.clone()
                };
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = Tensor {
                    data: g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    ..g.clone()
                };
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows as f64;
                let mut ga = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    for c in 0..x.cols {
                        ga.data[r * x.cols + c] = g.data[c] / n;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SelectRows(a, index) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                for (k, &r) in index.iter().enumerate() {
                    for c in 0..x.cols {
                        ga.data[r * x.cols + c] += g.data[k * x.cols + c];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::CosineRows(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(x.rows, x.cols);
                let mut gb = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let (xr, yr) = (x.row(r), y.row(r));
                    let nx = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ny = yr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let dot: f64 = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    let cos = dot / (nx * ny);
                    let gr = g.data[r];
                    for c in 0..x.cols {
                        ga.data[r * x.cols + c] =
                            gr * (yr[c] / (nx * ny) - cos * xr[c] / (nx * nx));
                        gb.data[r * x.cols + c] =
                            gr * (xr[c] / (nx * ny) - cos * yr[c] / (ny * ny));
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mask(a, mask) => {
                let ga = Tensor {
                    data: g.data.iter().zip(mask).map(|(g, m)| g * m).collect(),
                    ..g.clone()
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Propagate(x, op) => {
                let cols = g.cols;
                let mut gx = Tensor::zeros(op.in_rows, cols);
                for (i, row) in op.rows.iter().enumerate() {
                    let gi = &g.data[i * cols..(i + 1) * cols];
                    for &(j, w) in row {
                        for (dst, s) in gx.data[j * cols..(j + 1) * cols].iter_mut().zip(gi) {
                            *dst += w * s;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PropagateMax(x, op, arg) => {
                let cols = g.cols;
                let mut gx = Tensor::zeros(op.in_rows, cols);
                for (k, a) in arg.iter().enumerate() {
                    if let Some((j, w)) = a {
                        gx.data[j * cols + k % cols] += w * g.data[k];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SquaredError(p, target, scale) => {
                let pv = self.value(*p);
                let gs = g.item();
                let gp = Tensor {
                    data: pv
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(a, b)| 2.0 * (a - b) * scale * gs)
                        .collect(),
                    ..pv.clone()
                };
                self.accumulate(grads, *p, gp);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam state for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(TensorError::LearningRate(config.lr));
        }
        let zeros = |p: &Tensor| Tensor::zeros(p.rows, p.cols);
        Ok(Self {
            config,
            t: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        })
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::Mismatch {
                    op: "adam",
                    a: p.shape(),
                    b: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient);
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
                v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_oracle() {
        let x = t(&[&[1.0, 2.0], &[3.0, -4.0]]);
        assert_eq!(Tensor::identity(2).matmul(&x).unwrap(), x);
        let a = t(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 2.0], &[0.0, 0.5, 0.25], &[3.0, 1.0, -2.0]]);
        let b = t(&[&[1.0, 2.0], &[-0.5, 0.0], &[4.0, 1.5]]);
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
        assert!(matches!(b.matmul(&b), Err(TensorError::Mismatch { .. })));
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[3.0, -1.0]]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 0.0]);
    }

    #[test]
    fn add_commutes() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.5, -2.0]]));
        let b = tape.constant(t(&[&[0.25, 7.0]]));
        let ab = tape.add(a, b).unwrap();
        let ba = tape.add(b, a).unwrap();
        assert_eq!(tape.value(ab), tape.value(ba));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
        assert_eq!(tape.backward(y).err(), Some(TensorError::AlreadyBackpropagated));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(t(&[&[1.0, 2.0]]));
        let y = tape.scale(x, 4.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 4.0);
        assert_eq!(g.get(unused), Tensor::zeros(1, 2));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[&[1.0, 2.0]]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn cosine_node_examples() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[&[1.0, 0.0]]));
        let b = tape.param(t(&[&[0.0, 1.0]]));
        let c = tape.cosine_node(a, b).unwrap();
        assert_eq!(tape.value(c).item(), 0.0);

        let mut tape = Tape::new();
        let u = t(&[&[0.6, 0.8]]);
        let a = tape.param(u.clone());
        let b = tape.constant(u);
        let c = tape.cosine_node(a, b).unwrap();
        let g = tape.backward(c).unwrap();
        assert!(g.get(a).data().iter().all(|v| v.abs() < 1e-15));

        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(1, 3));
        assert_eq!(tape.cosine_node(z, z).err(), Some(TensorError::ZeroVectors));
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[1.0, 2.0, 3.0]]));
        assert_eq!(tape.dropout(x, 0.0, 1, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, 1, false).unwrap(), x);
        assert!(tape.dropout(x, 1.0, 1, true).is_err());

        let n = 100_000;
        let x = tape.constant(Tensor::new(1, n, vec![1.0; n]).unwrap());
        let y = tape.dropout(x, 0.3, 42, true).unwrap();
        let zeros = tape.value(y).data().iter().filter(|v| **v == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((0.29..=0.31).contains(&frac), "{frac}");
        let kept = tape.value(y).data().iter().find(|v| **v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.7).abs() < 1e-12);
        let again = tape.dropout(x, 0.3, 42, true).unwrap();
        assert_eq!(tape.value(y), tape.value(again));
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::column(vec![0.0, 1.0]).unwrap());
        let target = Tensor::column(vec![1.0, 1.0]).unwrap();
        let l = tape.mse(p, &target, Reduction::Sum).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).data(), &[-2.0, 0.0]);

        let mut tape = Tape::new();
        let p = tape.param(target.clone());
        let l = tape.mse(p, &target, Reduction::Mean).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let short = Tensor::column(vec![1.0]).unwrap();
        assert!(tape.mse(p, &short, Reduction::Sum).is_err());
    }

    #[test]
    fn adam_single_step_on_square() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &params,
        )
        .unwrap();
        // f(x) = x^2, f'(1) = 2; m̂ = 2, v̂ = 4 → step = 0.1 · 2 / (2 + 1e-8)
        adam.step(&mut params, &[Tensor::scalar(2.0)]).unwrap();
        assert!((params[0].item() - 0.9).abs() < 1e-8);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_zero_gradient_and_errors() {
        let mut params = vec![t(&[&[1.0, -2.0]])];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        adam.step(&mut params, &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.t, 1);
        assert!(adam
            .step(&mut params, &[t(&[&[f64::NAN, 0.0]])])
            .is_err());
        assert!(Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &params).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![t(&[&[0.3, -0.7]])];
            let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
            for k in 0..50 {
                let g = t(&[&[params[0].get(0, 0) * 2.0, (k as f64).sin()]]);
                adam.step(&mut params, &[g]).unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn propagate_matches_dense() {
        let mut op = SparseRows::new(3, 2);
        op.push(0, 1, 0.5);
        op.push(0, 2, 2.0);
        op.push(1, 0, -1.0);
        let x = t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let dense = op.to_dense().matmul(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = tape.propagate(xv, &Rc::new(op)).unwrap();
        assert_eq!(tape.value(y), &dense);
    }
}
