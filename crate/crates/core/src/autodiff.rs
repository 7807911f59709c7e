//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward evaluation. Parameters
//! live in a [`ParamStore`] and are borrowed, not copied, by the tape; large
//! constants (graph eigenvectors, derivative operators) can be borrowed the
//! same way. Calling [`Tape::backward`] walks the tape in reverse and returns
//! a [`Gradients`] table.
//!
//! All node values are 2-D: node fields are `N × channels`, row vectors are
//! `1 × c`, and scalars are `1 × 1`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::sparse::CsrMatrix;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Tanh-form GELU, smooth everywhere.
    Gelu,
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named, shape-tagged parameter tensors.
///
/// Every tensor is stored as a 2-D matrix; `shape` keeps the logical shape
/// (e.g. `[m, d, d]` for a spectral kernel stored as `m × d²`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Mat,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor. Panics on duplicate names or inconsistent shapes.
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "logical shape {shape:?} does not match storage for {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, shape, value });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// L2 norm of every tensor, keyed by name. Used in failure diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTn(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Act(Var, Activation),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    Sparse(Arc<CsrMatrix>, Var),
    ModeMul(Var, Var),
    MeanRows(Var),
    BroadcastRows(Var),
    Sum(Var),
    MeanSquare(Var),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    requires_grad: bool,
}

/// One forward evaluation's computation record.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: &'a ParamStore,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params,
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    /// Owned constant; no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Borrowed constant; no gradient flows into it.
    pub fn constant_ref(&mut self, value: &'a Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked, for sensitivities with respect to inputs.
    pub fn variable(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Cut the gradient path: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// The tape node for a stored parameter (created once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let params = self.params;
        let v = self.push(Cow::Borrowed(params.get(id)), Op::Leaf, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::MatMul(a, b), rg)
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t().dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::MatMulTn(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::Mul(a, b), rg)
    }

    /// `a + 1·row` where `row` is `1 × c`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1 x {c} row");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(Cow::Owned(value), Op::AddRow(a, row), rg)
    }

    /// Each row of `a` multiplied elementwise by the `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row expects a 1 x {c} row");
        let value = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(Cow::Owned(value), Op::MulRow(a, row), rg)
    }

    /// Row `i` of `a` scaled by `col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "mul_col expects an {n} x 1 column");
        let value = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(Cow::Owned(value), Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Scale(a, s), rg)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Offset(a), rg)
    }

    pub fn act(&mut self, a: Var, f: Activation) -> Var {
        if f == Activation::Identity {
            return a;
        }
        let value = self.value(a).mapv(|x| f.apply(x));
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Act(a, f), rg)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(value), Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::SliceCols(a, start), rg)
    }

    /// Rows of `a` selected by `idx` (repetition allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let value = self.value(a).select(Axis(0), &idx);
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::GatherRows(a, idx), rg)
    }

    /// `out[idx[e]] += a[e]`, producing `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, n_out: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), idx.len(), "scatter index length mismatch");
        let mut value = Array2::zeros((n_out, av.ncols()));
        for (e, &t) in idx.iter().enumerate() {
            value.row_mut(t).scaled_add(1.0, &av.row(e));
        }
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::ScatterAddRows(a, idx), rg)
    }

    /// Fixed sparse linear map `m · a`.
    pub fn sparse(&mut self, m: Arc<CsrMatrix>, a: Var) -> Var {
        let value = m.matmul(&self.value(a).view());
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Sparse(m, a), rg)
    }

    /// Mode-wise channel mixing: row `j` of `coef` (`m × d`) times the
    /// `d × d` matrix stored in row `j` of `kernel` (`m × d²`, row-major).
    pub fn mode_mul(&mut self, coef: Var, kernel: Var) -> Var {
        let (m, d) = self.shape(coef);
        assert_eq!(self.shape(kernel), (m, d * d), "mode_mul kernel shape mismatch");
        let cv = self.value(coef);
        let kv = self.value(kernel);
        let mut value = Array2::zeros((m, d));
        for j in 0..m {
            let kj = kv.row(j).into_shape_with_order((d, d)).expect("contiguous kernel row");
            value.row_mut(j).assign(&cv.row(j).dot(&kj));
        }
        let rg = self.rg(coef) || self.rg(kernel);
        self.push(Cow::Owned(value), Op::ModeMul(coef, kernel), rg)
    }

    /// Column means, `1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::MeanRows(a), rg)
    }

    /// Repeat a `1 × c` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "broadcast_rows expects a single row");
        let value = r.broadcast((n, r.ncols())).unwrap().to_owned();
        let rg = self.rg(row);
        self.push(Cow::Owned(value), Op::BroadcastRows(row), rg)
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Sum(a), rg)
    }

    /// Mean of squared entries, `1 × 1`. Zero for an empty matrix.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let ms = if v.is_empty() {
            0.0
        } else {
            v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
        };
        let rg = self.rg(a);
        self.push(Cow::Owned(Array2::from_elem((1, 1), ms)), Op::MeanSquare(a), rg)
    }

    /// Affine map `a · w + b`.
    pub fn linear(&mut self, a: Var, w: Var, b: Option<Var>) -> Var {
        let h = self.matmul(a, w);
        match b {
            Some(b) => self.add_row(h, b),
            None => h,
        }
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward() needs a scalar loss");
        self.backward_with(loss, Array2::from_elem((1, 1), 1.0))
    }

    /// Backpropagate an arbitrary cotangent `seed` from node `out`.
    pub fn backward_with(&self, out: Var, seed: Mat) -> Gradients {
        assert_eq!(self.shape(out), seed.dim(), "seed shape mismatch");
        let mut grads: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                params.push((id, g));
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Gradients { nodes: grads, params }
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulTn(a, b) => {
                // out = aᵀ b
                if self.rg(*a) {
                    acc(grads, *a, self.value(*b).dot(&g.t()));
                }
                if self.rg(*b) {
                    acc(grads, *b, self.value(*a).dot(g));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*row) {
                    acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.rg(*a) {
                    acc(grads, *a, g * self.value(*row));
                }
                if self.rg(*row) {
                    let prod = g * self.value(*a);
                    acc(grads, *row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, col) => {
                if self.rg(*a) {
                    acc(grads, *a, g * self.value(*col));
                }
                if self.rg(*col) {
                    let prod = g * self.value(*a);
                    acc(grads, *col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, s) => acc(grads, *a, g * *s),
            Op::Offset(a) => acc(grads, *a, g.clone()),
            Op::Act(a, f) => {
                let x = self.value(*a);
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(x)
                    .and(out)
                    .for_each(|d, &x, &y| *d *= f.derivative(x, y));
                acc(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        acc(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Array2::zeros(self.shape(*a));
                full.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(grads, *a, full);
            }
            Op::GatherRows(a, idx) => {
                let mut full = Array2::zeros(self.shape(*a));
                for (r, &src) in idx.iter().enumerate() {
                    full.row_mut(src).scaled_add(1.0, &g.row(r));
                }
                acc(grads, *a, full);
            }
            Op::ScatterAddRows(a, idx) => {
                acc(grads, *a, g.select(Axis(0), idx));
            }
            Op::Sparse(m, a) => acc(grads, *a, m.matmul_transpose(&g.view())),
            Op::ModeMul(coef, kernel) => {
                let (m, d) = self.shape(*coef);
                let cv = self.value(*coef);
                let kv = self.value(*kernel);
                if self.rg(*coef) {
                    let mut gc = Array2::zeros((m, d));
                    for j in 0..m {
                        let kj = kv.row(j).into_shape_with_order((d, d)).unwrap();
                        gc.row_mut(j).assign(&kj.dot(&g.row(j)));
                    }
                    acc(grads, *coef, gc);
                }
                if self.rg(*kernel) {
                    let mut gk = Array2::zeros((m, d * d));
                    for j in 0..m {
                        let c = cv.row(j);
                        let gj = g.row(j);
                        let mut row = gk.row_mut(j);
                        for p in 0..d {
                            let cp = c[p];
                            for q in 0..d {
                                row[p * d + q] = cp * gj[q];
                            }
                        }
                    }
                    acc(grads, *kernel, gk);
                }
            }
            Op::MeanRows(a) => {
                let n = self.shape(*a).0;
                let row = g / n as f64;
                acc(grads, *a, row.broadcast((n, g.ncols())).unwrap().to_owned());
            }
            Op::BroadcastRows(row) => {
                acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sum(a) => {
                let (n, c) = self.shape(*a);
                acc(grads, *a, Array2::from_elem((n, c), g[[0, 0]]));
            }
            Op::MeanSquare(a) => {
                let v = self.value(*a);
                if !v.is_empty() {
                    let k = 2.0 * g[[0, 0]] / v.len() as f64;
                    acc(grads, *a, v * k);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<(ParamId, Mat)>,
}

impl Gradients {
    /// Gradient with respect to any node created before the backward root.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients in parameter-id order.
    pub fn params(&self) -> &[(ParamId, Mat)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Mat)> {
        self.params
    }
}

/// Dense accumulator for parameter gradients across samples or steps.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Mat>,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params.entries().iter().map(|e| Array2::zeros(e.value.dim())).collect(),
        }
    }

    pub fn add(&mut self, grads: &[(ParamId, Mat)], weight: f64) {
        for (id, g) in grads {
            self.grads[id.0].scaled_add(weight, g);
        }
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn as_slice(&self) -> &[Mat] {
        &self.grads
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check<F>(store: &ParamStore, id: ParamId, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape);
        let grads = tape.backward(loss);
        let analytic = grads
            .params()
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap();
        let h = 1e-6;
        let shape = store.get(id).dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut plus = store.clone();
                plus.get_mut(id)[[i, j]] += h;
                let mut minus = store.clone();
                minus.get_mut(id)[[i, j]] -= h;
                let lp = {
                    let mut t = Tape::new(&plus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let lm = {
                    let mut t = Tape::new(&minus);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[[i, j]];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                    "entry ({i},{j}): fd {fd} vs analytic {a}"
                );
            }
        }
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.insert("w", vec![3, 2], array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]]);
        let b = store.insert("b", vec![1, 2], array![[0.05, -0.1]]);
        let k = store.insert("k", vec![2, 2, 2], array![[0.2, 0.1, -0.3, 0.4], [0.5, -0.2, 0.1, 0.3]]);
        let x = array![[1.0, 0.5, -0.3], [0.2, -1.0, 0.7], [0.4, 0.4, 0.1], [-0.6, 0.3, 0.9]];
        let basis = array![[0.5, 0.1], [0.5, -0.3], [0.5, 0.6], [0.5, -0.4]];
        let csr = Arc::new(CsrMatrix::from_rows(
            4,
            vec![
                vec![(0, -1.0), (1, 1.0)],
                vec![(1, -2.0), (2, 2.0)],
                vec![(3, 1.0)],
                vec![(0, 0.5), (3, -0.5)],
            ],
        ));
        let idx = Arc::new(vec![0, 2, 2, 3]);
        let f = |t: &mut Tape| {
            let xv = t.constant(x.clone());
            let wv = t.param(w);
            let bv = t.param(b);
            let kv = t.param(k);
            let h = t.linear(xv, wv, Some(bv));
            let h = t.act(h, Activation::Gelu);
            let s = t.constant(basis.clone());
            let coef = t.matmul_tn(s, h);
            let coef = t.mode_mul(coef, kv);
            let back = t.matmul(s, coef);
            let sp = t.sparse(csr.clone(), back);
            let gathered = t.gather_rows(sp, idx.clone());
            let gate = t.slice_cols(gathered, 0, 1);
            let gate = t.act(gate, Activation::Sigmoid);
            let weighted = t.mul_col(gathered, gate);
            let agg = t.scatter_add_rows(weighted, idx.clone(), 4);
            let pooled = t.mean_rows(agg);
            let modulated = t.mul_row(h, pooled);
            let cat = t.concat(&[modulated, back]);
            let cat = t.act(cat, Activation::Tanh);
            let sq = t.mul(cat, cat);
            let m = t.mean_square(sq);
            let s2 = t.sum(cat);
            let s2 = t.scale(s2, 0.1);
            t.add(m, s2)
        };
        fd_check(&store, w, f);
        fd_check(&store, b, f);
        fd_check(&store, k, f);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", vec![1, 1], array![[2.0]]);
        let mut t = Tape::new(&store);
        let wv = t.param(w);
        let d = t.detach(wv);
        let p = t.mul(wv, d);
        let grads = t.backward(p);
        // d/dw (w · stop(w)) = stop(w) = 2
        assert_eq!(grads.params()[0].1[[0, 0]], 2.0);
    }

    #[test]
    fn gelu_derivative_is_consistent() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            let an = Activation::Gelu.derivative(x, Activation::Gelu.apply(x));
            assert!((fd - an).abs() < 1e-8);
        }
    }
}
