//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied during a forward pass together
//! with whatever it needs for the backward pass. Parameters enter the tape as
//! leaves bound to a [`ParamId`]; [`Graph::backward`] returns one gradient per
//! parameter in the store, zero for parameters the loss never touched.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, lit, softmax_in_place, Matrix, Real};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    MaxPoolCols {
        x: Var,
        argmax: Vec<usize>,
    },
    BroadcastRows(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix<T>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Gradients aligned with a [`ParamStore`]'s registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            tensors: store.zeros_like(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => &node.value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls with the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        // Parameter values are read from the store, not copied onto the tape.
        let v = self.push(Matrix::zeros(0, 0), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width mismatch");
        let mut value = self.value(a).clone();
        let bias = r.data().to_vec();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(&bias) {
                *x = *x + b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let half = lit::<T>(0.5);
        let inv_sqrt2 = lit::<T>(core::f64::consts::FRAC_1_SQRT_2);
        let value = self
            .value(a)
            .map(|x| half * x * (T::one() + (x * inv_sqrt2).erf()));
        self.push(value, Op::Gelu(a))
    }

    /// Row-wise layer normalisation followed by the affine `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let n = lit::<T>(cols as f64);
        let eps = lit::<T>(LAYER_NORM_EPS);
        let mut normed = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / n;
            let var = row
                .iter()
                .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
                / n;
            let s = T::one() / (var + eps).sqrt();
            for (o, &v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv_std.push(s);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), cols, "layer_norm gamma width mismatch");
        assert_eq!(b.len(), cols, "layer_norm beta width mismatch");
        let mut value = normed.clone();
        for r in 0..rows {
            for ((o, &gg), &bb) in value.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::Softmax(a))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        self.select_rows_impl(table, ids, true)
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        self.select_rows_impl(x, rows, false)
    }

    fn select_rows_impl(&mut self, x: Var, rows: &[usize], gather: bool) -> Var {
        let src = self.value(x);
        let cols = src.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let value = Matrix::from_vec(rows.len(), cols, data);
        let op = if gather {
            Op::Gather {
                table: x,
                ids: rows.to_vec(),
            }
        } else {
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            }
        };
        self.push(value, op)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat_cols row mismatch");
                let w = src.cols();
                value.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
                offset += w;
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let src = self.value(x);
        let rows = src.rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + width]);
        }
        let value = Matrix::from_vec(rows, width, data);
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(src.data());
            rows += src.rows();
        }
        let value = Matrix::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Column-wise maximum over rows; ties route the gradient to the first row.
    pub fn max_pool_cols(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        assert!(rows > 0, "max_pool_cols over zero rows");
        let mut argmax = vec![0usize; cols];
        let mut out = src.row(0).to_vec();
        for r in 1..rows {
            for (c, &v) in src.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        self.push(Matrix::row_vector(out), Op::MaxPoolCols { x, argmax })
    }

    /// Repeats a `1×c` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        let src = self.value(x);
        assert_eq!(src.rows(), 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(n * src.cols());
        for _ in 0..n {
            data.extend_from_slice(src.data());
        }
        let value = Matrix::from_vec(n, src.cols(), data);
        self.push(value, Op::BroadcastRows(x))
    }

    /// Inverted dropout with a caller-supplied keep mask (already scaled).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Var {
        let value = {
            let src = self.value(x);
            assert_eq!(mask.len(), src.len(), "dropout mask length mismatch");
            let data = src.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            Matrix::from_vec(src.rows(), src.cols(), data)
        };
        self.push(value, Op::Dropout { x, mask })
    }

    /// Mean softmax cross-entropy of each row of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let src = self.value(logits);
        assert_eq!(src.rows(), targets.len(), "cross_entropy target count");
        assert!(!targets.is_empty(), "cross_entropy over zero rows");
        let mut probs = src.clone();
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = src.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row
                .iter()
                .fold(T::zero(), |a, &x| a + (x - max).exp())
                .ln()
                + max;
            total = total + lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let loss = total / lit(targets.len() as f64);
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` (an `n×1` column)
    /// against targets in `{0, 1}`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let src = self.value(logits);
        assert_eq!(src.len(), targets.len(), "bce target count");
        assert!(!targets.is_empty(), "bce over zero rows");
        let mut total = T::zero();
        for (&z, &y) in src.data().iter().zip(targets) {
            // softplus(z) - y z, written to stay finite for large |z|
            let softplus = z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln();
            total = total + softplus - y * z;
        }
        let loss = total / lit(targets.len() as f64);
        self.push(
            Matrix::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::scalar(s), Op::Sum(x))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, Error> {
        let out = self.value(loss);
        if out.shape() != (1, 1) {
            return Err(Error::Shape("backward requires a scalar loss"));
        }
        if !out.item().is_finite() {
            return Err(Error::NonFiniteLoss(out.item().to_f64()));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        let mut result = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => result.tensors[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut drow = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in drow.data_mut().iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.map(|x| x * f));
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |x, y| x * (T::one() - y * y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let half = lit::<T>(0.5);
                    let inv_sqrt2 = lit::<T>(core::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = lit::<T>(0.398_942_280_401_432_7);
                    let d = g.zip_map(self.value(*a), |gg, x| {
                        let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
                        gg * (cdf + x * pdf)
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    let gam = self.value(*gamma).data();
                    let n = lit::<T>(cols as f64);
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = normed.row(r);
                        for c in 0..cols {
                            dgamma.data_mut()[c] = dgamma.data()[c] + gr[c] * xh[c];
                            dbeta.data_mut()[c] = dbeta.data()[c] + gr[c];
                            dxhat[c] = gr[c] * gam[c];
                        }
                        let sum_d = dxhat.iter().fold(T::zero(), |a, &b| a + b);
                        let sum_dx = dot(&dxhat, xh);
                        let s = inv_std[r] / n;
                        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = s * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(gr, yr);
                        for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                            *out = yr[c] * (gr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Gather { table, ids } => {
                    let shape = self.value(*table).shape();
                    let mut d = Matrix::zeros(shape.0, shape.1);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &x) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    accumulate(&mut grads, *table, d);
                }
                Op::SelectRows { x, rows } => {
                    let shape = self.value(*x).shape();
                    let mut d = Matrix::zeros(shape.0, shape.1);
                    for (r, &src) in rows.iter().enumerate() {
                        for (o, &v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(&mut grads, p, d);
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let shape = self.value(*x).shape();
                    let mut d = Matrix::zeros(shape.0, shape.1);
                    let w = g.cols();
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, p, Matrix::from_vec(rows, cols, data));
                        offset += rows;
                    }
                }
                Op::MaxPoolCols { x, argmax } => {
                    let shape = self.value(*x).shape();
                    let mut d = Matrix::zeros(shape.0, shape.1);
                    for (c, &r) in argmax.iter().enumerate() {
                        d.set(r, c, g.get(0, c));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::BroadcastRows(x) => {
                    let mut d = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    accumulate(&mut grads, *x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.item() / lit(targets.len() as f64);
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[t] = row[t] - T::one();
                        for v in row.iter_mut() {
                            *v = *v * scale;
                        }
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::BceWithLogits { logits, targets } => {
                    let scale = g.item() / lit(targets.len() as f64);
                    let src = self.value(*logits);
                    let data = src
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                        .collect();
                    accumulate(
                        &mut grads,
                        *logits,
                        Matrix::from_vec(src.rows(), src.cols(), data),
                    );
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(shape.0, shape.1, g.item()));
                }
            }
        }
        Ok(result)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
