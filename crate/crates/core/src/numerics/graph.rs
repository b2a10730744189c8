//! Dynamic reverse-mode tape.
//!
//! Every forward pass builds a fresh [`Graph`]: operations compute their value
//! eagerly and record how to push gradients back to their inputs. Parameters
//! enter the graph once per pass through [`Graph::param`]; [`Graph::backward`]
//! walks the tape in reverse and adds the leaf gradients into the
//! [`ParameterStore`]. The graph is dropped afterwards.

use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::{matmul_at_b_into, matmul_into, Real, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    /// `(1 - z) * h + z * c`
    GruMix { z: Var, h: Var, c: Var },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MaskedSoftmax { x: Var },
    LogSoftmax(Var),
    Embed { table: Var, ids: Vec<usize> },
    Nll { x: Var, targets: Vec<usize>, weights: Vec<T> },
    Sum(Var),
    WeightedSum { w: Var, items: Vec<Var> },
    SelectRows { new: Var, prev: Var, keep_new: Vec<bool> },
    GatherRows { x: Var, idx: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::GruMix { .. } => "gru_mix",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Embed { .. } => "embed",
            Op::Nll { .. } => "nll",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::SelectRows { .. } => "select_rows",
            Op::GatherRows { .. } => "gather_rows",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
    transposed: HashMap<usize, Var>,
    store: Option<u64>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error
where
    T: Real,
{
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            transposed: HashMap::new(),
            store: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        value.ensure_finite(op.name(), id)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(id))
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a stored parameter; repeated calls within one pass return the
    /// same node.
    /// Parameters are snapshotted on first use; a graph serves one store.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        self.bind(store)?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let value = store.by_index(idx).1.value.clone();
        let v = self.push(value, Op::Param(idx), true)?;
        self.params.insert(idx, v);
        Ok(v)
    }

    fn bind(&mut self, store: &ParameterStore<T>) -> Result<()> {
        match self.store {
            Some(id) if id != store.id() => contract("graph already reads from a different parameter store"),
            _ => {
                self.store = Some(store.id());
                Ok(())
            }
        }
    }

    /// Transpose of a stored weight matrix, computed once per pass.
    pub fn param_t(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        let p = self.param(store, name)?;
        if let Some(&v) = self.transposed.get(&p.0) {
            return Ok(v);
        }
        let v = self.transpose(p)?;
        self.transposed.insert(p.0, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(out, Op::Transpose(a), ng)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a rank-1 bias to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        if tb.len() != c {
            return Err(shape_err("add_bias", ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % c])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.ng(&[a, bias]);
        self.push(out, Op::AddBias(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(&[a]);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(&[a]);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Convex GRU update `(1 - z) * h + z * c`.
    pub fn gru_mix(&mut self, z: Var, h: Var, c: Var) -> Result<Var> {
        let (tz, th, tc) = (self.value(z), self.value(h), self.value(c));
        if tz.dims2() != th.dims2() {
            return Err(shape_err("gru_mix", tz, th));
        }
        if tz.dims2() != tc.dims2() {
            return Err(shape_err("gru_mix", tz, tc));
        }
        let one = T::one();
        let data = tz
            .data()
            .iter()
            .zip(th.data())
            .zip(tc.data())
            .map(|((&z, &h), &c)| (one - z) * h + z * c)
            .collect();
        let out = Tensor::new(th.shape(), data)?;
        let ng = self.ng(&[z, h, c]);
        self.push(out, Op::GruMix { z, h, c }, ng)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return contract("concat of zero tensors");
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        let ng = self.ng(parts);
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if len == 0 || start + len > cols {
            return contract(format!(
                "slice {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(&[rows, len], data)?;
        let ng = self.ng(&[x]);
        self.push(out, Op::Slice { x, start }, ng)
    }

    /// Row-wise softmax over the entries whose mask is set; masked entries get
    /// exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let mask = mask.unwrap_or_else(|| vec![true; rows * cols]);
        if mask.len() != rows * cols {
            return contract("softmax mask does not cover the input");
        }
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = t.row_slice(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let mut max = T::neg_infinity();
            for (&v, &keep) in row.iter().zip(m) {
                if keep && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return contract(format!("softmax row {r} has no unmasked entries"));
            }
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut sum = T::zero();
            for j in 0..cols {
                if m[j] {
                    let e = (row[j] - max).exp();
                    out[j] = e;
                    sum += e;
                }
            }
            for o in out.iter_mut() {
                *o = *o / sum;
            }
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let ng = self.ng(&[x]);
        self.push(out, Op::MaskedSoftmax { x }, ng)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            data.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let ng = self.ng(&[x]);
        self.push(out, Op::LogSoftmax(x), ng)
    }

    /// Looks up one table row per id.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, dim) = t.dims2();
        if ids.is_empty() {
            return contract("embedding lookup with no ids");
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return contract(format!("token id {id} outside vocabulary of {vocab}"));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::new(&[ids.len(), dim], data)?;
        let ng = self.ng(&[table]);
        self.push(out, Op::Embed { table, ids: ids.to_vec() }, ng)
    }

    /// `-sum_r weights[r] * x[r, targets[r]]`, a scalar.
    pub fn nll(&mut self, logp: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let t = self.value(logp);
        let (rows, cols) = t.dims2();
        if targets.len() != rows || weights.len() != rows {
            return contract("nll targets/weights do not match rows");
        }
        let mut total = T::zero();
        for r in 0..rows {
            if targets[r] >= cols {
                return contract(format!("target id {} outside vocabulary of {cols}", targets[r]));
            }
            if weights[r] != T::zero() {
                total -= weights[r] * t.get2(r, targets[r]);
            }
        }
        let ng = self.ng(&[logp]);
        self.push(
            Tensor::scalar(total),
            Op::Nll {
                x: logp,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Per row `r`: `sum_j w[r, j] * items[j][r, :]`, accumulated in `j` order.
    pub fn weighted_sum(&mut self, w: Var, items: &[Var]) -> Result<Var> {
        let tw = self.value(w);
        let (rows, n) = tw.dims2();
        if n != items.len() || items.is_empty() {
            return contract(format!(
                "weighted_sum: {n} weights per row but {} items",
                items.len()
            ));
        }
        let first = self.value(items[0]);
        let dim = first.cols();
        for &it in items {
            if self.value(it).dims2() != (rows, dim) {
                return Err(shape_err("weighted_sum", first, self.value(it)));
            }
        }
        let mut data = vec![T::zero(); rows * dim];
        for (j, &it) in items.iter().enumerate() {
            let ti = self.value(it);
            for r in 0..rows {
                let wj = tw.get2(r, j);
                let out = &mut data[r * dim..(r + 1) * dim];
                for (o, &v) in out.iter_mut().zip(ti.row_slice(r)) {
                    *o += wj * v;
                }
            }
        }
        let out = Tensor::new(&[rows, dim], data)?;
        let mut deps = items.to_vec();
        deps.push(w);
        let ng = self.ng(&deps);
        self.push(
            out,
            Op::WeightedSum {
                w,
                items: items.to_vec(),
            },
            ng,
        )
    }

    /// Row `r` comes from `new` when `keep_new[r]`, otherwise from `prev`.
    pub fn select_rows(&mut self, new: Var, prev: Var, keep_new: &[bool]) -> Result<Var> {
        let (tn, tp) = (self.value(new), self.value(prev));
        if tn.dims2() != tp.dims2() {
            return Err(shape_err("select_rows", tn, tp));
        }
        let (rows, cols) = tn.dims2();
        if keep_new.len() != rows {
            return contract("select_rows mask length differs from row count");
        }
        if keep_new.iter().all(|&k| k) {
            return Ok(new);
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &k) in keep_new.iter().enumerate() {
            data.extend_from_slice(if k { tn.row_slice(r) } else { tp.row_slice(r) });
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let ng = self.ng(&[new, prev]);
        self.push(
            out,
            Op::SelectRows {
                new,
                prev,
                keep_new: keep_new.to_vec(),
            },
            ng,
        )
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return contract(format!("gather row {i} out of {rows}"));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(&[idx.len(), cols], data)?;
        let ng = self.ng(&[x]);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, ng)
    }

    /// Propagates d(loss)/d(node) back through the tape and adds the parameter
    /// gradients into `store`. Gradients accumulate across calls until the
    /// store is reset.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<()> {
        if self.store.is_some_and(|id| id != store.id()) {
            return contract("backward into a different parameter store than the forward pass read");
        }
        if !self.value(loss).is_scalar() {
            return contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else {
                continue;
            };
            gy.ensure_finite(node.op.name(), id)?;
            if let Op::Param(idx) = node.op {
                store.by_index_mut(idx).grad.add_assign(&gy);
                continue;
            }
            self.backprop(id, &gy, &mut grads)?;
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn backprop(&self, id: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        let one = T::one();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    let bt = tb.transpose();
                    matmul_into(gy.data(), bt.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_at_b_into(ta.data(), gy.data(), gb.data_mut(), m, k, n);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(&gy.transpose());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.slot(grads, v) {
                        g.add_assign(gy);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(gy);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let c = gb.len();
                    for (i, &g) in gy.data().iter().enumerate() {
                        gb.data_mut()[i % c] += g;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &o) in ga.data_mut().iter_mut().zip(gy.data()).zip(tb.data()) {
                        *g += d * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((g, &d), &o) in gb.data_mut().iter_mut().zip(gy.data()).zip(ta.data()) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (g, &d) in ga.data_mut().iter_mut().zip(gy.data()) {
                        *g += d * *c;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &s) in ga.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
                        *g += d * s * (one - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &t) in ga.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
                        *g += d * (one - t * t);
                    }
                }
            }
            Op::GruMix { z, h, c } => {
                let (tz, th, tc) = (self.value(*z), self.value(*h), self.value(*c));
                if let Some(gz) = self.slot(grads, *z) {
                    for (i, g) in gz.data_mut().iter_mut().enumerate() {
                        *g += gy.data()[i] * (tc.data()[i] - th.data()[i]);
                    }
                }
                if let Some(gh) = self.slot(grads, *h) {
                    for (i, g) in gh.data_mut().iter_mut().enumerate() {
                        *g += gy.data()[i] * (one - tz.data()[i]);
                    }
                }
                if let Some(gc) = self.slot(grads, *c) {
                    for (i, g) in gc.data_mut().iter_mut().enumerate() {
                        *g += gy.data()[i] * tz.data()[i];
                    }
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = gy.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            let src = &gy.data()[r * total + offset..r * total + offset + w];
                            for (g, &d) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *g += d;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start } => {
                let cols = self.value(*x).cols();
                let (rows, len) = gy.dims2();
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let dst = &mut gx.data_mut()[r * cols + start..r * cols + start + len];
                        for (g, &d) in dst.iter_mut().zip(gy.row_slice(r)) {
                            *g += d;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, .. } => {
                let (rows, cols) = y.dims2();
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let yr = y.row_slice(r);
                        let dr = gy.row_slice(r);
                        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dst[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = y.dims2();
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let yr = y.row_slice(r);
                        let dr = gy.row_slice(r);
                        let total: T = dr.iter().copied().sum();
                        let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dst[j] += dr[j] - yr[j].exp() * total;
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                let dim = y.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * dim..(id + 1) * dim];
                        for (g, &d) in dst.iter_mut().zip(gy.row_slice(r)) {
                            *g += d;
                        }
                    }
                }
            }
            Op::Nll { x, targets, weights } => {
                let cols = self.value(*x).cols();
                let d = gy.data()[0];
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gx.data_mut()[r * cols + t] -= w * d;
                    }
                }
            }
            Op::Sum(x) => {
                let d = gy.data()[0];
                if let Some(gx) = self.slot(grads, *x) {
                    gx.data_mut().iter_mut().for_each(|g| *g += d);
                }
            }
            Op::WeightedSum { w, items } => {
                let tw = self.value(*w);
                let (rows, dim) = gy.dims2();
                let n = items.len();
                if self.nodes[w.0].needs_grad {
                    let mut gw_local = vec![T::zero(); rows * n];
                    for (j, &it) in items.iter().enumerate() {
                        let ti = self.value(it);
                        for r in 0..rows {
                            gw_local[r * n + j] = ti
                                .row_slice(r)
                                .iter()
                                .zip(gy.row_slice(r))
                                .map(|(&a, &b)| a * b)
                                .sum();
                        }
                    }
                    let gw = self.slot(grads, *w).expect("needs grad");
                    for (g, v) in gw.data_mut().iter_mut().zip(gw_local) {
                        *g += v;
                    }
                }
                for (j, &it) in items.iter().enumerate() {
                    if let Some(gi) = self.slot(grads, it) {
                        for r in 0..rows {
                            let wj = tw.get2(r, j);
                            let dst = &mut gi.data_mut()[r * dim..(r + 1) * dim];
                            for (g, &d) in dst.iter_mut().zip(gy.row_slice(r)) {
                                *g += wj * d;
                            }
                        }
                    }
                }
            }
            Op::SelectRows { new, prev, keep_new } => {
                let cols = y.cols();
                for (v, want) in [(*new, true), (*prev, false)] {
                    if let Some(g) = self.slot(grads, v) {
                        for (r, &k) in keep_new.iter().enumerate() {
                            if k == want {
                                let dst = &mut g.data_mut()[r * cols..(r + 1) * cols];
                                for (a, &d) in dst.iter_mut().zip(gy.row_slice(r)) {
                                    *a += d;
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = y.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut gx.data_mut()[i * cols..(i + 1) * cols];
                        for (a, &d) in dst.iter_mut().zip(gy.row_slice(r)) {
                            *a += d;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}
