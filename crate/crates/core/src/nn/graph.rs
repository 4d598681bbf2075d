//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends one node holding its output; nodes are created in
//! topological order, so the backward sweep is a single reverse scan.

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        cols: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        base: Var,
        idx: Vec<usize>,
        rows: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: Vec<Vec<usize>>,
        weights: Vec<T>,
    },
    Dueling {
        v: Var,
        a: Var,
    },
    PickCols {
        x: Var,
        idx: Vec<usize>,
    },
    WeightedSquaredError {
        pred: Var,
        target: Vec<T>,
        weights: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape. A recording graph keeps what backward needs; an
/// inference graph (`Graph::inference`) only chains values forward.
pub struct Graph<'p, T: Real = f32> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    record: bool,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    node_grads: Vec<Option<Vec<T>>>,
    param_nodes: Vec<Option<Var>>,
    param_lens: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.node_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients; parameters the loss never reached get zeros.
    pub fn params(&self) -> ParamGrads<T> {
        let grads = self
            .param_nodes
            .iter()
            .zip(&self.param_lens)
            .map(|(node, &len)| {
                let g = node.and_then(|v| self.node_grads[v.0].clone());
                Some(g.unwrap_or_else(|| vec![T::ZERO; len]))
            })
            .collect();
        ParamGrads::from_parts(grads)
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            record: true,
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self {
            record: false,
            ..Self::new(store)
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let (op, requires_grad) = if self.record && requires_grad {
            (op, true)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (when recording).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter leaf; one node per parameter regardless of how often it is used.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: self.record,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// `x · w + b`; `x` is read as rows × (product of remaining extents).
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 || xt.cols() != wt.shape()[0] {
            return Err(shape_err(
                "affine",
                format!("input {:?} vs weight {:?}", xt.shape(), wt.shape()),
            ));
        }
        let (n, k, m) = (xt.rows(), wt.shape()[0], wt.shape()[1]);
        let mut out = vec![T::ZERO; n * m];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != m {
                return Err(shape_err(
                    "affine",
                    format!("bias {:?} vs output width {m}", bt.shape()),
                ));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bt.data());
            }
        }
        T::gemm(
            n,
            k,
            m,
            xt.data(),
            false,
            wt.data(),
            false,
            &mut out,
            b.is_some(),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::raw(vec![n, m], out), Op::Affine { x, w, b }, rg))
    }

    /// Stride-1 2-D convolution. `x`: N×C×H×W, `w`: O×C×K×K, `b`: O.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xt.shape(), wt.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || bt.len() != ws[0] {
            return Err(shape_err(
                "conv2d",
                format!("input {xs:?}, kernel {ws:?}, bias {:?}", bt.shape()),
            ));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} larger than padded input {xs:?}"),
            ));
        }
        let (ho, wo) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
        let plane = ho * wo;
        let l = n * plane;
        let ckk = c * k * k;
        let cols = im2col(xt.data(), n, c, h, wd, k, pad, ho, wo);
        let mut tmp = vec![T::ZERO; o * l];
        T::gemm(o, ckk, l, wt.data(), false, &cols, false, &mut tmp, false);
        let mut out = vec![T::ZERO; n * o * plane];
        for oc in 0..o {
            let bias = bt.data()[oc];
            for s in 0..n {
                let src = &tmp[oc * l + s * plane..oc * l + (s + 1) * plane];
                let dst = &mut out[(s * o + oc) * plane..(s * o + oc + 1) * plane];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = *v + bias;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let cols = if self.record && rg { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::raw(vec![n, o, ho, wo], out),
            Op::Conv2d { x, w, b, pad, cols },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let xt = self.value(x);
        let out = Tensor::raw(
            xt.shape().to_vec(),
            xt.data().iter().map(|&v| f(v)).collect(),
        );
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::ZERO { v } else { T::ZERO }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, T::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        same_shape(name, at.shape(), bt.shape())?;
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::raw(at.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let width = *xt.shape().last().expect("tensor has at least one axis");
        let mut out = xt.data().to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let out = Tensor::raw(xt.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Column-wise concatenation of row-aligned 2-D inputs.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.value(xs[0]).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                let shapes: Vec<_> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
                return Err(shape_err(
                    "concat",
                    format!("row counts differ: {shapes:?}"),
                ));
            }
        }
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::ZERO; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xt = self.value(x);
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(xt.row(r));
            }
            off += w;
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Tensor::raw(vec![rows, total], out),
            Op::ConcatCols(xs.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let cols = xt.cols();
        if len == 0 || start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {}) of {:?}", start + len, xt.shape()),
            ));
        }
        let rows = xt.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![rows, len], out),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= xt.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("indices {idx:?} into {:?}", xt.shape()),
            ));
        }
        let cols = xt.cols();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(xt.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![idx.len(), cols], out),
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Copy of `base` with rows `idx` replaced by the rows of `rows`.
    pub fn scatter_rows(&mut self, base: Var, idx: &[usize], rows: Var) -> Result<Var> {
        let (bt, rt) = (self.value(base), self.value(rows));
        let mut seen = vec![false; bt.rows()];
        let valid = rt.rows() == idx.len()
            && rt.cols() == bt.cols()
            && idx
                .iter()
                .all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
        if !valid {
            return Err(shape_err(
                "scatter_rows",
                format!(
                    "base {:?}, rows {:?}, indices {idx:?}",
                    bt.shape(),
                    rt.shape()
                ),
            ));
        }
        let cols = bt.cols();
        let mut out = bt.data().to_vec();
        for (k, &i) in idx.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(rt.row(k));
        }
        let out = Tensor::raw(vec![bt.rows(), cols], out);
        let rg = self.rg(base) || self.rg(rows);
        Ok(self.push(
            out,
            Op::ScatterRows {
                base,
                idx: idx.to_vec(),
                rows,
            },
            rg,
        ))
    }

    /// Grouped multi-head scaled dot-product attention. Row `g` of `q`
    /// attends over the key/value rows listed in `groups[g]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let bad = heads == 0
            || qt.cols() % heads != 0
            || vt.cols() % heads != 0
            || kt.cols() != qt.cols()
            || kt.rows() != vt.rows()
            || groups.len() != qt.rows();
        if bad {
            return Err(shape_err(
                "attention",
                format!(
                    "query {:?}, key {:?}, value {:?}, {heads} heads, {} groups",
                    qt.shape(),
                    kt.shape(),
                    vt.shape(),
                    groups.len()
                ),
            ));
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::EmptyScope);
        }
        if let Some(&m) = groups.iter().flatten().find(|&&m| m >= kt.rows()) {
            return Err(shape_err(
                "attention",
                format!("member {m} out of {} key rows", kt.rows()),
            ));
        }
        let dk = qt.cols() / heads;
        let dv = vt.cols() / heads;
        let scale = T::ONE / T::of(dk as f64).sqrt();
        let mut out = vec![T::ZERO; qt.rows() * heads * dv];
        let mut weights = Vec::with_capacity(groups.iter().map(Vec::len).sum::<usize>() * heads);
        let mut scores = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            for h in 0..heads {
                let qh = &qt.row(g)[h * dk..(h + 1) * dk];
                scores.clear();
                scores.extend(
                    members
                        .iter()
                        .map(|&m| dot(qh, &kt.row(m)[h * dk..(h + 1) * dk]) * scale),
                );
                softmax_in_place(&mut scores);
                let dst = &mut out[(g * heads + h) * dv..(g * heads + h + 1) * dv];
                for (&m, &mu) in members.iter().zip(&scores) {
                    for (d, &val) in dst.iter_mut().zip(&vt.row(m)[h * dv..(h + 1) * dv]) {
                        *d += mu * val;
                    }
                }
                weights.extend_from_slice(&scores);
            }
        }
        let out = Tensor::raw(vec![qt.rows(), heads * dv], out);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let groups = groups.to_vec();
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                weights,
            },
            rg,
        ))
    }

    /// Attention weights of the most recent forward through [`Graph::attention`]
    /// node `att`, laid out group-major, then head, then member.
    pub fn attention_weights(&self, att: Var) -> Option<Vec<T>> {
        match &self.nodes[att.0].op {
            Op::Attention { weights, .. } => Some(weights.clone()),
            _ => None,
        }
    }

    /// Dueling aggregation `Q = V + (A − mean(A))`; `v`: N×1, `a`: N×A.
    pub fn dueling(&mut self, v: Var, a: Var) -> Result<Var> {
        let (vt, at) = (self.value(v), self.value(a));
        if vt.cols() != 1 || vt.rows() != at.rows() {
            return Err(shape_err(
                "dueling",
                format!("value {:?} vs advantage {:?}", vt.shape(), at.shape()),
            ));
        }
        let width = at.cols();
        let mut out = Vec::with_capacity(at.len());
        for r in 0..at.rows() {
            let row = at.row(r);
            let mean = row.iter().copied().sum::<T>() / T::of(width as f64);
            let base = vt.data()[r];
            out.extend(row.iter().map(|&x| base + (x - mean)));
        }
        let out = Tensor::raw(vec![at.rows(), width], out);
        let rg = self.rg(v) || self.rg(a);
        Ok(self.push(out, Op::Dueling { v, a }, rg))
    }

    /// Element `idx[r]` of every row `r`.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if idx.len() != xt.rows() || idx.iter().any(|&i| i >= xt.cols()) {
            return Err(shape_err(
                "pick_cols",
                format!("indices {idx:?} into {:?}", xt.shape()),
            ));
        }
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &c)| xt.row(r)[c]).collect();
        let out = Tensor::raw(vec![idx.len()], out);
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::PickCols {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `Σ_i weights[i] · (target[i] − pred[i])²` as a 1-element tensor.
    pub fn weighted_squared_error(
        &mut self,
        pred: Var,
        target: &[T],
        weights: &[T],
    ) -> Result<Var> {
        let pt = self.value(pred);
        if pt.len() != target.len() || pt.len() != weights.len() {
            return Err(shape_err(
                "weighted_squared_error",
                format!(
                    "prediction {:?}, {} targets, {} weights",
                    pt.shape(),
                    target.len(),
                    weights.len()
                ),
            ));
        }
        let loss: T = pt
            .data()
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((&p, &t), &w)| w * (t - p) * (t - p))
            .sum();
        let rg = self.rg(pred);
        let op = Op::WeightedSquaredError {
            pred,
            target: target.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push(Tensor::raw(vec![1], vec![loss]), op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::raw(vec![1], vec![s]), Op::Sum(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::ONE]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads);
        }
        Ok(Gradients {
            node_grads: grads,
            param_nodes: self.param_nodes.clone(),
            param_lens: self.store.iter().map(|(_, _, t)| t.len()).collect(),
        })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]))
    }

    fn backprop_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xt.rows(), wt.shape()[0], wt.shape()[1]);
                if let Some(dx) = self.grad_buf(grads, *x) {
                    T::gemm(n, m, k, gout, false, wt.data(), true, dx, true);
                }
                if let Some(dw) = self.grad_buf(grads, *w) {
                    T::gemm(k, n, m, xt.data(), true, gout, false, dw, true);
                }
                if let Some(db) = b.and_then(|b| self.grad_buf(grads, b)) {
                    for row in gout.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
                    }
                }
            }
            Op::Conv2d { x, w, b, pad, cols } => {
                let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let (ho, wo) = (out.shape()[2], out.shape()[3]);
                let plane = ho * wo;
                let l = n * plane;
                let ckk = c * k * k;
                // gout is N×O×P; regroup to O×(N·P)
                let mut dt = vec![T::ZERO; o * l];
                for s in 0..n {
                    for oc in 0..o {
                        dt[oc * l + s * plane..oc * l + (s + 1) * plane]
                            .copy_from_slice(&gout[(s * o + oc) * plane..(s * o + oc + 1) * plane]);
                    }
                }
                if let Some(dw) = self.grad_buf(grads, *w) {
                    T::gemm(o, l, ckk, &dt, false, cols, true, dw, true);
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    for (oc, d) in db.iter_mut().enumerate() {
                        *d += dt[oc * l..(oc + 1) * l].iter().copied().sum::<T>();
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let wt = self.value(*w);
                    let mut dcols = vec![T::ZERO; ckk * l];
                    T::gemm(ckk, o, l, wt.data(), true, &dt, false, &mut dcols, false);
                    let dx = self.grad_buf(grads, *x).expect("requires grad");
                    col2im(&dcols, dx, n, c, h, wd, k, *pad, ho, wo);
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(gout).zip(out.data()) {
                        if *y > T::ZERO {
                            *d += *g;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for ((d, g), &y) in dx.iter_mut().zip(gout).zip(out.data()) {
                        *d += *g * y * (T::ONE - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for ((d, g), &y) in dx.iter_mut().zip(gout).zip(out.data()) {
                        *d += *g * (T::ONE - y * y);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -T::ONE
                } else {
                    T::ONE
                };
                if let Some(da) = self.grad_buf(grads, *a) {
                    da.iter_mut().zip(gout).for_each(|(d, g)| *d += *g);
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    db.iter_mut().zip(gout).for_each(|(d, g)| *d += sign * *g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.grad_buf(grads, *a) {
                    let bt = self.value(*b);
                    for ((d, g), y) in da.iter_mut().zip(gout).zip(bt.data()) {
                        *d += *g * *y;
                    }
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    let at = self.value(*a);
                    for ((d, g), y) in db.iter_mut().zip(gout).zip(at.data()) {
                        *d += *g * *y;
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    let width = *out.shape().last().expect("non-empty shape");
                    for ((d, g), y) in dx
                        .chunks_mut(width)
                        .zip(gout.chunks(width))
                        .zip(out.data().chunks(width))
                    {
                        let inner: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((dd, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                            *dd += yy * (gg - inner);
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = out.cols();
                let mut off = 0;
                for x in xs {
                    let w = self.value(*x).cols();
                    if let Some(dx) = self.grad_buf(grads, *x) {
                        for (r, drow) in dx.chunks_mut(w).enumerate() {
                            let src = &gout[r * total + off..r * total + off + w];
                            drow.iter_mut().zip(src).for_each(|(d, g)| *d += *g);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = out.cols();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (drow, grow) in dx.chunks_mut(cols).zip(gout.chunks(len)) {
                        drow[*start..*start + len]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(d, g)| *d += *g);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = out.cols();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (k, &r) in idx.iter().enumerate() {
                        let src = &gout[k * cols..(k + 1) * cols];
                        dx[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, g)| *d += *g);
                    }
                }
            }
            Op::ScatterRows { base, idx, rows } => {
                let cols = out.cols();
                if let Some(db) = self.grad_buf(grads, *base) {
                    let mut replaced = vec![false; out.rows()];
                    idx.iter().for_each(|&r| replaced[r] = true);
                    for (r, (d, g)) in db.chunks_mut(cols).zip(gout.chunks(cols)).enumerate() {
                        if !replaced[r] {
                            d.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
                        }
                    }
                }
                if let Some(dr) = self.grad_buf(grads, *rows) {
                    for (k, &r) in idx.iter().enumerate() {
                        let src = &gout[r * cols..(r + 1) * cols];
                        dr[k * cols..(k + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, g)| *d += *g);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                weights,
            } => {
                self.attention_backward(gout, grads, (*q, *k, *v), *heads, groups, weights);
            }
            Op::Dueling { v, a } => {
                let width = out.cols();
                if let Some(dv) = self.grad_buf(grads, *v) {
                    for (d, g) in dv.iter_mut().zip(gout.chunks(width)) {
                        *d += g.iter().copied().sum::<T>();
                    }
                }
                if let Some(da) = self.grad_buf(grads, *a) {
                    let inv = T::ONE / T::of(width as f64);
                    for (d, g) in da.chunks_mut(width).zip(gout.chunks(width)) {
                        let mean = g.iter().copied().sum::<T>() * inv;
                        d.iter_mut().zip(g).for_each(|(dd, &gg)| *dd += gg - mean);
                    }
                }
            }
            Op::PickCols { x, idx } => {
                let cols = self.value(*x).cols();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (r, (&c, &g)) in idx.iter().zip(gout).enumerate() {
                        dx[r * cols + c] += g;
                    }
                }
            }
            Op::WeightedSquaredError {
                pred,
                target,
                weights,
            } => {
                let pt = self.value(*pred);
                let g0 = gout[0];
                if let Some(dp) = self.grad_buf(grads, *pred) {
                    for (((d, &p), &t), &w) in dp.iter_mut().zip(pt.data()).zip(target).zip(weights)
                    {
                        *d += g0 * T::of(2.0) * w * (p - t);
                    }
                }
            }
            Op::Sum(x) => {
                let g0 = gout[0];
                if let Some(dx) = self.grad_buf(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g0);
                }
            }
        }
    }

    fn attention_backward(
        &self,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        groups: &[Vec<usize>],
        weights: &[T],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let dk = qt.cols() / heads;
        let dv = vt.cols() / heads;
        let scale = T::ONE / T::of(dk as f64).sqrt();
        let mut dq = vec![T::ZERO; qt.len()];
        let mut dkey = vec![T::ZERO; kt.len()];
        let mut dval = vec![T::ZERO; vt.len()];
        let (kc, vc) = (kt.cols(), vt.cols());
        let mut off = 0;
        let mut dmu = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            for h in 0..heads {
                let mu = &weights[off..off + members.len()];
                off += members.len();
                let go = &gout[(g * heads + h) * dv..(g * heads + h + 1) * dv];
                dmu.clear();
                for (&m, &w) in members.iter().zip(mu) {
                    let vrow = &vt.row(m)[h * dv..(h + 1) * dv];
                    dmu.push(dot(go, vrow));
                    let dst = &mut dval[m * vc + h * dv..m * vc + (h + 1) * dv];
                    dst.iter_mut().zip(go).for_each(|(d, &x)| *d += w * x);
                }
                let inner: T = dmu.iter().zip(mu).map(|(&a, &b)| a * b).sum();
                let qh = &qt.row(g)[h * dk..(h + 1) * dk];
                for ((&m, &w), &dm) in members.iter().zip(mu).zip(&dmu) {
                    let ds = w * (dm - inner) * scale;
                    let krow = &kt.row(m)[h * dk..(h + 1) * dk];
                    let dqh = &mut dq[g * qt.cols() + h * dk..g * qt.cols() + (h + 1) * dk];
                    dqh.iter_mut().zip(krow).for_each(|(d, &x)| *d += ds * x);
                    let dkh = &mut dkey[m * kc + h * dk..m * kc + (h + 1) * dk];
                    dkh.iter_mut().zip(qh).for_each(|(d, &x)| *d += ds * x);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dkey), (v, dval)] {
            if let Some(dst) = self.grad_buf(grads, var) {
                dst.iter_mut().zip(&buf).for_each(|(d, s)| *d += *s);
            }
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(row[0], T::max);
    let mut total = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = T::ONE / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Unfolds `x` (N×C×H×W) into a (C·K·K)×(N·Ho·Wo) matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let plane = ho * wo;
    let l = n * plane;
    let mut cols = vec![T::ZERO; c * k * k * l];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst_row = &mut cols[row * l..(row + 1) * l];
                for s in 0..n {
                    let src = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    let dst = &mut dst_row[s * plane..(s + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    dx: &mut [T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let plane = ho * wo;
    let l = n * plane;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src_row = &cols[row * l..(row + 1) * l];
                for s in 0..n {
                    let src = &src_row[s * plane..(s + 1) * plane];
                    let dst = &mut dx[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
