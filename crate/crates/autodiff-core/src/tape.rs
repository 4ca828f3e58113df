use std::collections::HashMap;

use crate::error::{AdResult, AutodiffError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Variance floor of [`Tape::layer_norm_rows`].
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, row: usize },
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    GatherRows { a: usize, indices: Vec<usize> },
    /// Elementwise map with its local derivative saved at forward time.
    Unary { a: usize, derivative: Vec<f64> },
    /// Row softmax, possibly restricted to a top-k support; backward uses the output.
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    RowSums(usize),
    ColumnMeans(usize),
    Reshape(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddRow { a, row } => vec![*a, *row],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SliceRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::GatherRows { a, .. }
            | Op::Unary { a, .. }
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::ColumnMeans(a)
            | Op::Reshape(a) => vec![*a],
        }
    }
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    /// No gradient for any of `num_params` parameters.
    pub fn empty(num_params: usize) -> Self {
        Self {
            params: vec![None; num_params],
            leaves: HashMap::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to an input leaf created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var.0)
    }

    /// Adds another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) -> AdResult<()> {
        if other.params.len() > self.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (None, Some(t)) => *mine = Some(t.clone()),
                (Some(m), Some(t)) => {
                    if !m.same_shape(t) {
                        return Err(AutodiffError::Shape("gradient shapes differ".into()));
                    }
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.params.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Record of a forward computation over parameters of one [`ParamStore`].
///
/// Nodes are appended in evaluation order, so every node's inputs have smaller
/// indices; backward walks the indices in reverse and visits each node once.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Row softmax over the `k` largest entries of each row; the rest get 0. Ties
/// keep the lower column index.
fn softmax_rows_raw(x: &Tensor, k: usize) -> Vec<f64> {
    let cols = x.cols();
    let mut out = vec![0.0; x.numel()];
    let mut order: Vec<usize> = (0..cols).collect();
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let keep: &[usize] = if k >= cols {
            &order[..]
        } else {
            order.sort_by(|a, b| row[*b].total_cmp(&row[*a]).then(a.cmp(b)));
            &order[..k]
        };
        let max = keep.iter().map(|c| row[*c]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in keep {
            let e = (row[*c] - max).exp();
            out[r * cols + c] = e;
            total += e;
        }
        for c in keep {
            out[r * cols + c] /= total;
        }
        if k < cols {
            order.sort_unstable();
        }
    }
    out
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        match &self.nodes[var.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        let t = self.value(var);
        (t.rows(), t.cols())
    }

    /// Whether gradients flow back through `var`.
    pub fn tracks_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> AdResult<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[*i].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: self.store.get(id).requires_grad,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, var);
        var
    }

    pub fn param_by_name(&mut self, name: &str) -> AdResult<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> AdResult<Var> {
        self.input(value, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`] when tracked.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> AdResult<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "input" });
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> AdResult<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::matrix(r, c, data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0), "mul")
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> AdResult<Var> {
        let (n, d) = self.shape(a);
        if self.shape(row) != (1, d) {
            return Err(AutodiffError::Shape(format!(
                "add_row: row {:?} does not broadcast over {:?}",
                self.shape(row),
                (n, d)
            )));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x += r[i % d];
        }
        self.push(v, Op::AddRow { a: a.0, row: row.0 }, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> AdResult<Var> {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a.0, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> AdResult<Var> {
        self.unary(a, "add_scalar", |x| (x + s, 1.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(AutodiffError::Shape(format!(
                "matmul: {:?} x {:?}",
                (n, k),
                (k2, m)
            )));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let v = Tensor::matrix(n, m, data)?;
        self.push(v, Op::MatMul(a.0, b.0), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        let v = Tensor::matrix(c, r, transpose_raw(self.value(a).data(), r, c))?;
        self.push(v, Op::Transpose(a.0), "transpose")
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> AdResult<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat_rows of nothing".into()))?;
        let cols = self.shape(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if c != cols {
                return Err(AutodiffError::Shape(format!("concat_rows: {c} vs {cols} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), "concat_rows")
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> AdResult<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat_cols of nothing".into()))?;
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if r != rows {
                return Err(AutodiffError::Shape(format!("concat_cols: {r} vs {rows} rows")));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, cols, data)?;
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), "concat_cols")
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        if start >= end || end > r {
            return Err(AutodiffError::Shape(format!("slice_rows {start}..{end} of {r} rows")));
        }
        let v = Tensor::matrix(end - start, c, self.value(a).data()[start * c..end * c].to_vec())?;
        self.push(v, Op::SliceRows { a: a.0, start }, "slice_rows")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(AutodiffError::Shape(format!("slice_cols {start}..{end} of {c} columns")));
        }
        let src = self.value(a);
        let data = (0..r)
            .flat_map(|i| src.row_slice(i)[start..end].iter().copied())
            .collect();
        let v = Tensor::matrix(r, end - start, data)?;
        self.push(v, Op::SliceCols { a: a.0, start }, "slice_cols")
    }

    /// Rows picked by index; an index may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        if indices.is_empty() || indices.iter().any(|i| *i >= r) {
            return Err(AutodiffError::Shape(format!("gather_rows {indices:?} of {r} rows")));
        }
        let src = self.value(a);
        let data = indices.iter().flat_map(|i| src.row_slice(*i).iter().copied()).collect();
        let v = Tensor::matrix(indices.len(), c, data)?;
        self.push(
            v,
            Op::GatherRows {
                a: a.0,
                indices: indices.to_vec(),
            },
            "gather_rows",
        )
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> (f64, f64)) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        let (values, derivative): (Vec<f64>, Vec<f64>) = self.value(a).data().iter().map(|x| f(*x)).unzip();
        if derivative.iter().any(|d| !d.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let v = Tensor::matrix(r, c, values)?;
        self.push(v, Op::Unary { a: a.0, derivative }, name)
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn custom_unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> AdResult<Var> {
        self.unary(a, "custom_unary", |x| (f(x), df(x)))
    }

    pub fn relu(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> AdResult<Var> {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
        const C: f64 = 0.044_715;
        self.unary(a, "gelu", |x| {
            let u = K * (x + C * x * x * x);
            let t = u.tanh();
            let du = K * (1.0 + 3.0 * C * x * x);
            (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
        })
    }

    pub fn tanh(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "tanh", |x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn exp(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "exp", |x| {
            let e = x.exp();
            (e, e)
        })
    }

    /// Natural log; non-positive inputs trip the non-finite check.
    pub fn ln(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "ln", |x| (x.ln(), 1.0 / x))
    }

    pub fn square(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "square", |x| (x * x, 2.0 * x))
    }

    /// `|x|`, with derivative 0 at 0.
    pub fn abs(&mut self, a: Var) -> AdResult<Var> {
        self.unary(a, "abs", |x| {
            let d = if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            };
            (x.abs(), d)
        })
    }

    /// Softmax along each row, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> AdResult<Var> {
        let cols = self.shape(a).1;
        self.topk_softmax_rows(a, cols)
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> AdResult<Var> {
        match axis {
            1 => self.softmax_rows(a),
            0 => {
                let t = self.transpose(a)?;
                let s = self.softmax_rows(t)?;
                self.transpose(s)
            }
            _ => Err(AutodiffError::Shape(format!("softmax axis {axis} on a matrix"))),
        }
    }

    /// Softmax over the `k` largest logits of each row, zero elsewhere. Equals
    /// the softmax of the kept logits alone.
    pub fn topk_softmax_rows(&mut self, a: Var, k: usize) -> AdResult<Var> {
        let (r, c) = self.shape(a);
        if k == 0 || c == 0 {
            return Err(AutodiffError::Shape(format!("top-{k} softmax over {c} columns")));
        }
        let v = Tensor::matrix(r, c, softmax_rows_raw(self.value(a), k))?;
        self.push(v, Op::Softmax(a.0), "softmax")
    }

    /// Per-row standardization (population variance floored at
    /// [`LAYER_NORM_EPS`]) followed by `gain * x_hat + bias`.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> AdResult<Var> {
        let (n, d) = self.shape(x);
        if d < 2 {
            return Err(AutodiffError::Shape("layer norm needs at least 2 features".into()));
        }
        if self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(AutodiffError::Shape(format!(
                "layer norm affine shapes {:?} {:?} for {d} features",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                normalized.push(h);
                out.push(g[c] * h + b[c]);
            }
        }
        let v = Tensor::matrix(n, d, out)?;
        self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                normalized,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn sum(&mut self, a: Var) -> AdResult<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), "sum")
    }

    pub fn mean(&mut self, a: Var) -> AdResult<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0), "mean")
    }

    /// `n x d -> n x 1` sums along each row.
    pub fn row_sums(&mut self, a: Var) -> AdResult<Var> {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::matrix(t.rows(), 1, data)?;
        self.push(v, Op::RowSums(a.0), "row_sums")
    }

    /// `n x d -> 1 x d` averages down each column.
    pub fn column_means(&mut self, a: Var) -> AdResult<Var> {
        let t = self.value(a);
        let (n, d) = (t.rows(), t.cols());
        let mut data = vec![0.0; d];
        for r in 0..n {
            for (acc, v) in data.iter_mut().zip(t.row_slice(r)) {
                *acc += v / n as f64;
            }
        }
        self.push(Tensor::row(data), Op::ColumnMeans(a.0), "column_means")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> AdResult<Var> {
        let v = Tensor::matrix(rows, cols, self.value(a).data().to_vec())?;
        self.push(v, Op::Reshape(a.0), "reshape")
    }

    /// `x W + b` for a `1 x out` bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> AdResult<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn mse(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let d = self.sub(a, b)?;
        let s = self.square(d)?;
        self.mean(s)
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let d = self.sub(a, b)?;
        let s = self.abs(d)?;
        self.mean(s)
    }

    /// Reverse pass from a one-element `root`.
    pub fn backward(&self, root: Var) -> AdResult<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(AutodiffError::NotScalar(root_value.shape().to_vec()));
        }
        let mut out = Gradients::empty(self.store.len());
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for i in node.op.inputs() {
                assert!(i < idx, "tape nodes must only reference earlier nodes");
            }
            self.propagate(idx, &g, &mut grads);
            if let Op::Leaf = node.op {
                let t = self.value(Var(idx));
                let grad = Tensor::matrix(t.rows(), t.cols(), g)?;
                match node.value {
                    Value::Param(id) => out.params[id.0] = Some(grad),
                    Value::Owned(_) => {
                        out.leaves.insert(idx, grad);
                    }
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], i: usize, contribution: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[i].needs_grad {
            return;
        }
        let c = contribution();
        match &mut grads[i] {
            Some(existing) => existing.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(c),
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| self.value(Var(i));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, || g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, || g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect());
            }
            Op::AddRow { a, row } => {
                self.accumulate(grads, *a, || g.to_vec());
                let d = val(*row).cols();
                self.accumulate(grads, *row, || {
                    let mut s = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        s[i % d] += v;
                    }
                    s
                });
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, || g.iter().map(|v| v * s).collect()),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                self.accumulate(grads, *a, || matmul_raw(g, &transpose_raw(bv.data(), k, m), n, m, k));
                self.accumulate(grads, *b, || matmul_raw(&transpose_raw(av.data(), n, k), g, k, n, m));
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).rows(), val(*a).cols());
                self.accumulate(grads, *a, || transpose_raw(g, c, r));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).numel();
                    self.accumulate(grads, *p, || g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = val(parts[0]).rows();
                let total: usize = parts.iter().map(|p| val(*p).cols()).sum();
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    self.accumulate(grads, *p, || {
                        (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + c].iter().copied())
                            .collect()
                    });
                    offset += c;
                }
            }
            Op::SliceRows { a, start } => {
                let src = val(*a);
                let c = src.cols();
                self.accumulate(grads, *a, || {
                    let mut full = vec![0.0; src.numel()];
                    full[start * c..start * c + g.len()].copy_from_slice(g);
                    full
                });
            }
            Op::SliceCols { a, start } => {
                let src = val(*a);
                let (r, c) = (src.rows(), src.cols());
                let width = g.len() / r;
                self.accumulate(grads, *a, || {
                    let mut full = vec![0.0; r * c];
                    for i in 0..r {
                        full[i * c + start..i * c + start + width].copy_from_slice(&g[i * width..(i + 1) * width]);
                    }
                    full
                });
            }
            Op::GatherRows { a, indices } => {
                let src = val(*a);
                let c = src.cols();
                self.accumulate(grads, *a, || {
                    let mut full = vec![0.0; src.numel()];
                    for (k, i) in indices.iter().enumerate() {
                        for j in 0..c {
                            full[i * c + j] += g[k * c + j];
                        }
                    }
                    full
                });
            }
            Op::Unary { a, derivative } => {
                self.accumulate(grads, *a, || g.iter().zip(derivative).map(|(x, d)| x * d).collect())
            }
            Op::Softmax(a) => {
                let y = val(idx);
                let c = y.cols();
                self.accumulate(grads, *a, || {
                    let mut dx = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            dx[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    dx
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = val(*gain).data();
                let d = gv.len();
                let n = inv_std.len();
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        let h = &normalized[r * d..(r + 1) * d];
                        let dh: Vec<f64> = (0..d).map(|c| g[r * d + c] * gv[c]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dh.iter().zip(h).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for c in 0..d {
                            dx[r * d + c] = inv_std[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                    dx
                });
                self.accumulate(grads, *gain, || {
                    let mut s = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        s[i % d] += v * normalized[i];
                    }
                    s
                });
                self.accumulate(grads, *bias, || {
                    let mut s = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        s[i % d] += v;
                    }
                    s
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, || vec![g[0]; val(*a).numel()]),
            Op::Mean(a) => {
                let n = val(*a).numel();
                self.accumulate(grads, *a, || vec![g[0] / n as f64; n]);
            }
            Op::RowSums(a) => {
                let c = val(*a).cols();
                self.accumulate(grads, *a, || g.iter().flat_map(|v| std::iter::repeat(*v).take(c)).collect());
            }
            Op::ColumnMeans(a) => {
                let n = val(*a).rows();
                self.accumulate(grads, *a, || {
                    (0..n).flat_map(|_| g.iter().map(move |v| v / n as f64)).collect()
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, || g.to_vec()),
        }
    }
}
