//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles in
//! execution order, which is a valid topological order by construction.
//! [`Graph::backward`] walks the record in reverse and accumulates
//! gradients into every leaf that requires them.
//!
//! Parameters live outside the graph in a [`ParamStore`]; the first use of a
//! parameter inside a graph registers it as a leaf and later uses reuse the
//! same node, so gradients from every use site are summed.

use std::collections::HashMap;
use std::sync::Arc;

use super::dense::{gemm_into, MatView};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, T),
    PowScalar(Var, T),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Silu(Var),
    Abs(Var),
    ClampMax(Var, T),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    Reshape(Var),
    Expand { input: Var, map: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    MaxAxis { input: Var, argmax: Vec<usize> },
    Gather { input: Var, indices: Vec<usize> },
    MaskedFill { input: Var, mask: Vec<bool> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf node, `None` when no path connects it to the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    /// Add every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g);
        }
    }
}

/// Recording tape. See the module docs.
pub struct Graph<'p, T: Scalar> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

fn is_suffix(short: &[usize], full: &[usize]) -> bool {
    short.len() <= full.len() && full[full.len() - short.len()..] == *short
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb == 1 || is_suffix(b, a) {
        Ok(a.to_vec())
    } else if na == 1 || is_suffix(a, b) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// Sum a broadcast gradient back to `n` elements (trailing/modulo layout).
fn reduce_to<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); n];
    for (i, &v) in g.iter().enumerate() {
        out[i % n] = out[i % n] + v;
    }
    out
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Training graph bound to a parameter store.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Graph that records values only; no node requires gradients.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store)
        }
    }

    /// Graph without parameters, for operating on explicit inputs.
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false, None)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), true, None)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(T::of(value)))
    }

    /// Register (once) and return the leaf for a stored parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let requires_grad = store.get(id).requires_grad;
        let v = self.leaf(store.shared_value(id), requires_grad, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise binary -------------------------------------------------

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        mk: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, va.shape(), vb.shape())?;
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let (na, nb) = (da.len(), db.len());
        let data = if na == n && nb == n {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(da[i % na], db[i % nb])).collect()
        };
        Ok(self.push(Tensor::raw(shape, data), mk(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    // ---- elementwise unary --------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(a, move |x| x + c, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(a, move |x| x * c, Op::MulScalar(a, c))
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Var {
        let p = T::of(p);
        self.unary(a, move |x| x.powf(p), Op::PowScalar(a, p))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// `min(x, c)`; the gradient is zero where the clamp is active.
    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(a, move |x| x.min(c), Op::ClampMax(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    // ---- linear algebra -----------------------------------------------------

    /// `op(a) @ op(b)` for 2-D operands, `op` optionally transposing.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("expected 2-D operands, got {:?} and {:?}", va.shape(), vb.shape()),
            ));
        }
        let av = MatView::new(va.data(), va.shape()[0], va.shape()[1], ta);
        let bv = MatView::new(vb.data(), vb.shape()[0], vb.shape()[1], tb);
        if av.cols != bv.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    va.shape(),
                    if ta { "^T" } else { "" },
                    vb.shape(),
                    if tb { "^T" } else { "" }
                ),
            ));
        }
        let mut out = vec![T::zero(); av.rows * bv.cols];
        gemm_into(av, bv, &mut out, false);
        let value = Tensor::raw(vec![av.rows, bv.cols], out);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {:?}", va.shape())));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let d = va.data();
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(d[i * c + j]);
            }
        }
        Ok(self.push(Tensor::raw(vec![c, r], out), Op::Transpose(a), &[a]))
    }

    // ---- shape manipulation -------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Explicit broadcast: every input dim must equal the target or be 1.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.value(a).shape().to_vec();
        if from.len() != shape.len() || from.iter().zip(shape).any(|(&f, &t)| f != t && f != 1) {
            return Err(Error::shape("expand", format!("{from:?} -> {shape:?}")));
        }
        let mut src_strides = vec![0usize; from.len()];
        let mut acc = 1;
        for d in (0..from.len()).rev() {
            src_strides[d] = if from[d] == 1 { 0 } else { acc };
            acc *= from[d];
        }
        let n: usize = shape.iter().product();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        Ok(self.push(Tensor::raw(shape.to_vec(), data), Op::Expand { input: a, map }, &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = outer_inner(&shape, axis);
        let mut data = vec![T::zero(); shape.iter().product()];
        let mut offset = 0;
        for v in inputs {
            let t = self.value(*v);
            let len = t.shape()[axis];
            let src = t.data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        Ok(self.push(
            Tensor::raw(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let shape_in = t.shape().to_vec();
        if axis >= shape_in.len() || len == 0 || start + len > shape_in[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape_in:?}", start + len),
            ));
        }
        let (outer, full, inner) = outer_inner(&shape_in, axis);
        let src = t.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut shape = shape_in;
        shape[axis] = len;
        Ok(self.push(Tensor::raw(shape, data), Op::Slice { input: a, axis, start }, &[a]))
    }

    /// Split the last axis into chunks of the given widths.
    pub fn split_last(&mut self, a: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let axis = self.shape(a).len() - 1;
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice(a, axis, start, w)?);
            start += w;
        }
        if start != self.shape(a)[axis] {
            return Err(Error::shape(
                "split",
                format!("widths {widths:?} do not cover {:?}", self.shape(a)),
            ));
        }
        Ok(out)
    }

    // ---- reductions ---------------------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s = s + *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::raw(shape, data), Op::Softmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::of(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let shape_in = t.shape().to_vec();
        if axis >= shape_in.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {shape_in:?}")));
        }
        let (outer, len, inner) = outer_inner(&shape_in, axis);
        let src = t.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[base + i];
                }
            }
        }
        let mut shape = shape_in;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::raw(shape, data), Op::SumAxis { input: a, axis }, &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.mul_scalar(s, 1.0 / n as f64))
    }

    /// Max over `axis`, removing it. Ties resolve to the lowest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let shape_in = t.shape().to_vec();
        if axis >= shape_in.len() {
            return Err(Error::shape("max_axis", format!("axis {axis} of {shape_in:?}")));
        }
        let (outer, len, inner) = outer_inner(&shape_in, axis);
        let src = t.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut shape = shape_in;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::raw(shape, data), Op::MaxAxis { input: a, argmax }, &[a]))
    }

    // ---- indexing -----------------------------------------------------------

    /// Select rows (axis 0) by index; indices may repeat.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.shape()[0];
        if indices.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", format!("index {bad} out of {rows} rows")));
        }
        let width = t.numel() / rows;
        let src = t.data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.push(
            Tensor::raw(shape, data),
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            &[a],
        ))
    }

    /// Replace entries where `mask` is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.numel() {
            return Err(Error::shape(
                "masked_fill",
                format!("mask of {} entries for shape {:?}", mask.len(), t.shape()),
            ));
        }
        let fill = T::of(value);
        let data = t
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { fill } else { x })
            .collect();
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::raw(shape, data),
            Op::MaskedFill {
                input: a,
                mask: mask.to_vec(),
            },
            &[a],
        ))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        }
        let mut leaves = HashMap::new();
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    if let Some(pid) = node.param {
                        params.push((pid, g.clone()));
                    }
                    leaves.insert(i, g);
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        params.sort_by_key(|(id, _)| id.0);
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let shape = self.value(v).shape().to_vec();
        self.accumulate(grads, v, Tensor::raw(shape, data));
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[i].value;
        let gd = g.data();
        let unary = |grads: &mut [Option<Tensor<T>>], a: Var, f: &dyn Fn(T, T, T) -> T| {
            // f(grad, input, output)
            let x = self.value(a).data();
            let y = out.data();
            let data = gd.iter().zip(x).zip(y).map(|((&g, &x), &y)| f(g, x, y)).collect();
            self.acc_vec(grads, a, data);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (na, nb) = (self.value(*a).numel(), self.value(*b).numel());
                self.acc_vec(grads, *a, reduce_to(gd, na));
                self.acc_vec(grads, *b, reduce_to(gd, nb));
            }
            Op::Sub(a, b) => {
                let (na, nb) = (self.value(*a).numel(), self.value(*b).numel());
                self.acc_vec(grads, *a, reduce_to(gd, na));
                let neg: Vec<T> = gd.iter().map(|&x| -x).collect();
                self.acc_vec(grads, *b, reduce_to(&neg, nb));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (xa.len(), xb.len());
                if self.nodes[a.0].requires_grad {
                    let ga: Vec<T> = gd.iter().enumerate().map(|(k, &g)| g * xb[k % nb]).collect();
                    self.acc_vec(grads, *a, reduce_to(&ga, na));
                }
                if self.nodes[b.0].requires_grad {
                    let gb: Vec<T> = gd.iter().enumerate().map(|(k, &g)| g * xa[k % na]).collect();
                    self.acc_vec(grads, *b, reduce_to(&gb, nb));
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (xa.len(), xb.len());
                if self.nodes[a.0].requires_grad {
                    let ga: Vec<T> = gd.iter().enumerate().map(|(k, &g)| g / xb[k % nb]).collect();
                    self.acc_vec(grads, *a, reduce_to(&ga, na));
                }
                if self.nodes[b.0].requires_grad {
                    let gb: Vec<T> = gd
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| {
                            let d = xb[k % nb];
                            -g * xa[k % na] / (d * d)
                        })
                        .collect();
                    self.acc_vec(grads, *b, reduce_to(&gb, nb));
                }
            }
            Op::Neg(a) => unary(grads, *a, &|g, _, _| -g),
            Op::AddScalar(a) => unary(grads, *a, &|g, _, _| g),
            Op::MulScalar(a, c) => {
                let c = *c;
                unary(grads, *a, &move |g, _, _| g * c)
            }
            Op::PowScalar(a, p) => {
                let p = *p;
                unary(grads, *a, &move |g, x, _| g * p * x.powf(p - T::one()))
            }
            Op::Exp(a) => unary(grads, *a, &|g, _, y| g * y),
            Op::Log(a) => unary(grads, *a, &|g, x, _| g / x),
            Op::Tanh(a) => unary(grads, *a, &|g, _, y| g * (T::one() - y * y)),
            Op::Sigmoid(a) => unary(grads, *a, &|g, _, y| g * y * (T::one() - y)),
            Op::Softplus(a) => unary(grads, *a, &|g, x, _| g * sigmoid(x)),
            Op::Relu(a) => unary(grads, *a, &|g, x, _| if x > T::zero() { g } else { T::zero() }),
            Op::Silu(a) => unary(grads, *a, &|g, x, _| {
                let s = sigmoid(x);
                g * (s + x * s * (T::one() - s))
            }),
            Op::Abs(a) => unary(grads, *a, &|g, x, _| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
            Op::ClampMax(a, c) => {
                let c = *c;
                unary(grads, *a, &move |g, x, _| if x < c { g } else { T::zero() })
            }
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let av = MatView::new(va.data(), va.shape()[0], va.shape()[1], *ta);
                let bv = MatView::new(vb.data(), vb.shape()[0], vb.shape()[1], *tb);
                let gv = MatView::new(gd, av.rows, bv.cols, false);
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); va.numel()];
                    if *ta {
                        gemm_into(bv, gv.t(), &mut da, false);
                    } else {
                        gemm_into(gv, bv.t(), &mut da, false);
                    }
                    self.acc_vec(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); vb.numel()];
                    if *tb {
                        gemm_into(gv.t(), av, &mut db, false);
                    } else {
                        gemm_into(av.t(), gv, &mut db, false);
                    }
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut data = Vec::with_capacity(r * c);
                for j in 0..c {
                    for i in 0..r {
                        data.push(gd[i * c + j]);
                    }
                }
                self.acc_vec(grads, *a, data);
            }
            Op::Reshape(a) => self.acc_vec(grads, *a, gd.to_vec()),
            Op::Expand { input, map } => {
                let mut data = vec![T::zero(); self.value(*input).numel()];
                for (k, &src) in map.iter().enumerate() {
                    data[src] = data[src] + gd[k];
                }
                self.acc_vec(grads, *input, data);
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let (outer, total, inner) = outer_inner(shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).shape()[*axis];
                    if self.nodes[v.0].requires_grad {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            data.extend_from_slice(&gd[s..s + len * inner]);
                        }
                        self.acc_vec(grads, *v, data);
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape_in = self.value(*input).shape();
                let (outer, full, inner) = outer_inner(shape_in, *axis);
                let len = out.shape()[*axis];
                let mut data = vec![T::zero(); self.value(*input).numel()];
                for o in 0..outer {
                    let d = (o * full + start) * inner;
                    let s = o * len * inner;
                    data[d..d + len * inner].copy_from_slice(&gd[s..s + len * inner]);
                }
                self.acc_vec(grads, *input, data);
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let y = out.data();
                let mut data = vec![T::zero(); y.len()];
                for r in 0..y.len() / c {
                    let row = r * c..(r + 1) * c;
                    let dot: T = y[row.clone()].iter().zip(&gd[row.clone()]).map(|(&a, &b)| a * b).sum();
                    for k in row {
                        data[k] = y[k] * (gd[k] - dot);
                    }
                }
                self.acc_vec(grads, *a, data);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.acc_vec(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.acc_vec(grads, *a, vec![gd[0] / T::of(n as f64); n]);
            }
            Op::SumAxis { input, axis } => {
                let shape_in = self.value(*input).shape();
                let (outer, len, inner) = outer_inner(shape_in, *axis);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        data.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.acc_vec(grads, *input, data);
            }
            Op::MaxAxis { input, argmax } => {
                let mut data = vec![T::zero(); self.value(*input).numel()];
                for (k, &src) in argmax.iter().enumerate() {
                    data[src] = data[src] + gd[k];
                }
                self.acc_vec(grads, *input, data);
            }
            Op::Gather { input, indices } => {
                let t = self.value(*input);
                let width = t.numel() / t.shape()[0];
                let mut data = vec![T::zero(); t.numel()];
                for (k, &row) in indices.iter().enumerate() {
                    for c in 0..width {
                        data[row * width + c] = data[row * width + c] + gd[k * width + c];
                    }
                }
                self.acc_vec(grads, *input, data);
            }
            Op::MaskedFill { input, mask } => {
                let data = gd
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { T::zero() } else { g })
                    .collect();
                self.acc_vec(grads, *input, data);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[3, 2]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2]);
        assert!(g.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let s = g.softmax(a);
        let v = g.value(s).data();
        assert!(v.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::<f32>::detached();
        let a = g.constant(Tensor::zeros(&[1]));
        let s = g.sigmoid(a);
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::detached();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        let sq = g.square(x);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_or_no_gradient() {
        let mut g = Graph::<f64>::detached();
        let x = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        let z = g.mul_scalar(x, 0.0);
        let l = g.sum(z);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::detached();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::ones(&[2]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn trailing_broadcast_bias() {
        let mut g = Graph::<f64>::detached();
        let x = g.input(Tensor::ones(&[4, 3]));
        let b = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).row(2), &[2.0, 3.0, 4.0]);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(b).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut g = Graph::<f64>::detached();
        let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(t(&[2, 1], &[5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 5.0, 4.0, 6.0]);
        let rows = g.concat(&[a, a], 0).unwrap();
        assert_eq!(g.shape(rows), &[4, 2]);
    }

    #[test]
    fn expand_and_gather() {
        let mut g = Graph::<f64>::detached();
        let a = g.input(t(&[2, 1], &[1.0, 2.0]));
        let e = g.expand(a, &[2, 3]).unwrap();
        assert_eq!(g.value(e).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let r = g.gather(e, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(r).row(0), &[2.0, 2.0, 2.0]);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let mut g = Graph::<f64>::detached();
        let a = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        let m = g.masked_fill(a, &[false, true, false], -7.0).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, -7.0, 3.0]);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn detached_input_reports_none() {
        let mut g = Graph::<f64>::detached();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        let y = g.input(t(&[2], &[1.0, 2.0]));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(y).is_none());
    }

    #[test]
    fn inference_graph_records_no_grad() {
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", Tensor::ones(&[2, 2]));
        let mut g = Graph::inference(&store);
        let wv = g.param(w);
        let s = g.sum(wv);
        assert!(!g.requires_grad(s));
        assert_eq!(g.value(s).item(), 4.0);
    }
}
