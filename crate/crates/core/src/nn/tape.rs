//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Operations are appended in evaluation order, so every operand of a node
//! precedes it and the tape is a topological order of the computation. The
//! backward sweep walks it once in reverse, accumulating gradients into the
//! operands of each node whose output received a gradient.

use crate::error::{Error, Result};
use crate::nn::params::{Grads, ParamStore};
use crate::nn::scalar::{gemm, Scalar, Trans};
use crate::nn::tensor::{log_sum_exp, sigmoid, softmax_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
        mask: Option<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        scale: T,
    },
    BceLogits {
        logits: Var,
        targets: Vec<T>,
        scale: T,
    },
    Sum(Var),
    Scale(Var, T),
    Concat(Var, Var),
    Select {
        new: Var,
        old: Var,
        mask: Vec<bool>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Embedding { .. } => "embedding",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceLogits { .. } => "bce_with_logits",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Select { .. } => "select",
        }
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation over the parameters of a [`ParamStore`].
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => self.params.tensor(i),
            _ => node
                .value
                .as_ref()
                .expect("non-parameter nodes own their value"),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "operand {} is not recorded before its consumer; the computation would contain a cycle",
                v.0
            )));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Input, false)
    }

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(idx),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
        Ok(self.param(idx))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} · {:?}", av.shape(), bv.shape()),
                ));
            }
            av.matmul(bv)?
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        let out = {
            let (av, bv) = (self.value(a), self.value(bias));
            if bv.shape().len() != 1 || av.cols() != bv.len() {
                return Err(Error::shape(
                    "add_bias",
                    format!("{:?} + {:?}", av.shape(), bv.shape()),
                ));
            }
            let mut out = av.clone();
            let n = bv.len();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddBias(a, bias), rg)
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(T::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = {
            let av = self.value(a);
            let cols = av.cols();
            let mut out = Tensor::zeros(av.shape());
            for (src, dst) in av.data().chunks(cols).zip(out.data_mut().chunks_mut(cols)) {
                softmax_into(src, dst);
            }
            out
        };
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Gathers rows of a `V×d` table. Rows whose id equals `mask` come out
    /// as zeros and pass no gradient back to the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize], mask: Option<usize>) -> Result<Var> {
        self.check(table)?;
        let out = {
            let tv = self.value(table);
            if tv.shape().len() != 2 {
                return Err(Error::shape("embedding", format!("table {:?}", tv.shape())));
            }
            let (vocab, dim) = (tv.rows(), tv.cols());
            let mut out = Tensor::zeros(&[ids.len(), dim]);
            for (r, &id) in ids.iter().enumerate() {
                if id >= vocab {
                    return Err(Error::shape(
                        "embedding",
                        format!("id {id} outside table of {vocab} rows"),
                    ));
                }
                if Some(id) != mask {
                    out.row_mut(r).copy_from_slice(tv.row(id));
                }
            }
            out
        };
        let rg = self.rg(table);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                mask,
            },
            rg,
        )
    }

    /// `scale · Σ_rows −log softmax(logits_row)[target_row]`, skipping rows
    /// whose target is `None`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        scale: T,
    ) -> Result<Var> {
        self.check(logits)?;
        let (loss, probs) = {
            let lv = self.value(logits);
            if lv.rows() != targets.len() || lv.shape().len() != 2 {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits {:?} with {} targets", lv.shape(), targets.len()),
                ));
            }
            let v = lv.cols();
            let mut probs = vec![T::zero(); lv.len()];
            let mut loss = T::zero();
            for (r, target) in targets.iter().enumerate() {
                let Some(t) = *target else { continue };
                if t >= v {
                    return Err(Error::shape(
                        "cross_entropy",
                        format!("target {t} outside {v} classes"),
                    ));
                }
                let row = lv.row(r);
                loss += log_sum_exp(row) - row[t];
                softmax_into(row, &mut probs[r * v..(r + 1) * v]);
            }
            (loss * scale, probs)
        };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            rg,
        )
    }

    /// `scale · Σ [softplus(z) − y·z]`: binary cross-entropy of sigmoid
    /// outputs against 0/1 targets, evaluated from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>, scale: T) -> Result<Var> {
        self.check(logits)?;
        let loss = {
            let lv = self.value(logits);
            if lv.shape() != targets.shape() {
                return Err(Error::shape(
                    "bce_with_logits",
                    format!("{:?} vs {:?}", lv.shape(), targets.shape()),
                ));
            }
            let mut loss = T::zero();
            for (&z, &y) in lv.data().iter().zip(targets.data()) {
                loss += z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
            }
            loss * scale
        };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.data().to_vec(),
                scale,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape().len() != 2 || bv.shape().len() != 2 || av.rows() != bv.rows() {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} | {:?}", av.shape(), bv.shape()),
                ));
            }
            let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
            let mut data = Vec::with_capacity(rows * (ca + cb));
            for r in 0..rows {
                data.extend_from_slice(av.row(r));
                data.extend_from_slice(bv.row(r));
            }
            Tensor::new(vec![rows, ca + cb], data)?
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Concat(a, b), rg)
    }

    /// Row `r` of the result is row `r` of `new` when `mask[r]`, else of `old`.
    pub fn select_rows(&mut self, new: Var, old: Var, mask: &[bool]) -> Result<Var> {
        self.check(new)?;
        self.check(old)?;
        let out = {
            let (nv, ov) = (self.value(new), self.value(old));
            if nv.shape() != ov.shape() || nv.rows() != mask.len() {
                return Err(Error::shape(
                    "select",
                    format!(
                        "{:?} / {:?} with {} mask rows",
                        nv.shape(),
                        ov.shape(),
                        mask.len()
                    ),
                ));
            }
            let mut out = ov.clone();
            for (r, &take) in mask.iter().enumerate() {
                if take {
                    out.row_mut(r).copy_from_slice(nv.row(r));
                }
            }
            out
        };
        let rg = self.rg(new) || self.rg(old);
        self.push(
            out,
            Op::Select {
                new,
                old,
                mask: mask.to_vec(),
            },
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut param_grads: Vec<Option<Tensor<T>>> =
            (0..self.params.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.rg(*a) {
                        let ga = slot(&mut grads, *a, av.shape());
                        gemm(
                            Trans::No,
                            Trans::Yes,
                            m,
                            n,
                            k,
                            g.data(),
                            bv.data(),
                            T::one(),
                            ga.data_mut(),
                        );
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, bv.shape());
                        gemm(
                            Trans::Yes,
                            Trans::No,
                            k,
                            m,
                            n,
                            av.data(),
                            g.data(),
                            T::one(),
                            gb.data_mut(),
                        );
                    }
                }
                Op::AddBias(a, b) => {
                    if self.rg(*b) {
                        let bv = self.value(*b);
                        let n = bv.len();
                        let gb = slot(&mut grads, *b, bv.shape());
                        for row in g.data().chunks(n) {
                            for (acc, &x) in gb.data_mut().iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, g.shape());
                        for (acc, &x) in gb.data_mut().iter_mut().zip(g.data()) {
                            *acc -= x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let ga = slot(&mut grads, *a, av.shape());
                        for ((acc, &x), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data())
                        {
                            *acc += x * y;
                        }
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, bv.shape());
                        for ((acc, &x), &y) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data())
                        {
                            *acc += x * y;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().expect("owned");
                    let ga = slot(&mut grads, *a, y.shape());
                    for ((acc, &x), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *acc += x * s * (T::one() - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().expect("owned");
                    let ga = slot(&mut grads, *a, y.shape());
                    for ((acc, &x), &t) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *acc += x * (T::one() - t * t);
                    }
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().expect("owned");
                    let cols = y.cols();
                    let ga = slot(&mut grads, *a, y.shape());
                    for ((acc, gr), yr) in ga
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(g.data().chunks(cols))
                        .zip(y.data().chunks(cols))
                    {
                        let dot: T = gr.iter().zip(yr).map(|(&x, &s)| x * s).sum();
                        for ((o, &x), &s) in acc.iter_mut().zip(gr).zip(yr) {
                            *o += s * (x - dot);
                        }
                    }
                }
                Op::Embedding { table, ids, mask } => {
                    let tv = self.value(*table);
                    let dim = tv.cols();
                    let gt = slot(&mut grads, *table, tv.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        if Some(id) == *mask {
                            continue;
                        }
                        let src = &g.data()[r * dim..(r + 1) * dim];
                        for (acc, &x) in gt.row_mut(id).iter_mut().zip(src) {
                            *acc += x;
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    scale,
                } => {
                    let lv = self.value(*logits);
                    let v = lv.cols();
                    let coef = g.data()[0] * *scale;
                    let gl = slot(&mut grads, *logits, lv.shape());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let row = &mut gl.data_mut()[r * v..(r + 1) * v];
                        for (acc, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *acc += coef * p;
                        }
                        row[t] -= coef;
                    }
                }
                Op::BceLogits {
                    logits,
                    targets,
                    scale,
                } => {
                    let lv = self.value(*logits);
                    let coef = g.data()[0] * *scale;
                    let gl = slot(&mut grads, *logits, lv.shape());
                    for ((acc, &z), &y) in gl.data_mut().iter_mut().zip(lv.data()).zip(targets) {
                        *acc += coef * (sigmoid(z) - y);
                    }
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    let gv = g.data()[0];
                    let ga = slot(&mut grads, *a, &shape);
                    for acc in ga.data_mut() {
                        *acc += gv;
                    }
                }
                Op::Scale(a, factor) => {
                    let ga = slot(&mut grads, *a, g.shape());
                    for (acc, &x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *acc += x * *factor;
                    }
                }
                Op::Concat(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ca, cb) = (av.cols(), bv.cols());
                    if self.rg(*a) {
                        let ga = slot(&mut grads, *a, av.shape());
                        for (dst, src) in ga.data_mut().chunks_mut(ca).zip(g.data().chunks(ca + cb))
                        {
                            for (acc, &x) in dst.iter_mut().zip(&src[..ca]) {
                                *acc += x;
                            }
                        }
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, bv.shape());
                        for (dst, src) in gb.data_mut().chunks_mut(cb).zip(g.data().chunks(ca + cb))
                        {
                            for (acc, &x) in dst.iter_mut().zip(&src[ca..]) {
                                *acc += x;
                            }
                        }
                    }
                }
                Op::Select { new, old, mask } => {
                    let cols = g.cols();
                    for (target, take) in [(*new, true), (*old, false)] {
                        if !self.rg(target) {
                            continue;
                        }
                        let gt = slot(&mut grads, target, g.shape());
                        for (r, &m) in mask.iter().enumerate() {
                            if m == take {
                                let src = &g.data()[r * cols..(r + 1) * cols];
                                for (acc, &x) in gt.row_mut(r).iter_mut().zip(src) {
                                    *acc += x;
                                }
                            }
                        }
                    }
                }
            }
        }

        let tensors = param_grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor::zeros(self.params.tensor(i).shape())))
            .collect();
        Ok(Grads::from_tensors(tensors))
    }
}

fn slot<'g, T: Scalar>(
    grads: &'g mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g),
        empty @ None => *empty = Some(g.clone()),
    }
}
