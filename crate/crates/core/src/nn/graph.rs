//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever the
//! backward rule needs (masks, softmax outputs, normalization statistics).
//! Parameters are read in place from a [`ParamStore`]; [`Graph::backward`]
//! returns their gradients as a [`Gradients`] map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<F>,
        rstd: Vec<F>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    MeanPool(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    MergeRows {
        base: Var,
        update: Var,
        idx: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, &[F])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (i, g)))
    }
}

pub struct Graph<'s, F: Real> {
    store: &'s ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
    backward_done: bool,
}

const LN_EPS: f64 = 1e-5;

impl<'s, F: Real> Graph<'s, F> {
    /// Inference graph: dropout is the identity.
    pub fn eval(store: &'s ParamStore<F>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            rng: None,
            backward_done: false,
        }
    }

    /// Training graph: dropout masks are drawn from `rng`.
    pub fn train(store: &'s ParamStore<F>, rng: ChaCha8Rng) -> Self {
        Self {
            rng: Some(rng),
            ..Self::eval(store)
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Parameter leaf, created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `a·b` for `a: n×k`, `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix(a, "matmul")?;
        let (k2, m) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![F::zero(); n * m];
        F::gemm(
            n,
            k,
            m,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (m, 1),
            F::zero(),
            &mut out,
            (m, 1),
        );
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a·bᵀ` for `a: n×k`, `b: m×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix(a, "matmul_nt")?;
        let (m, k2) = self.matrix(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![F::zero(); n * m];
        F::gemm(
            n,
            k,
            m,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (1, k),
            F::zero(),
            &mut out,
            (m, 1),
        );
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Elementwise sum; two single-element tensors always add.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let scalars = self.value(a).len() == 1 && self.value(b).len() == 1;
        if self.shape(a) != self.shape(b) && !scalars {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Broadcasts the vector `bias` over every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(bias).len() != cols {
            return Err(self.mismatch("add_row", a, bias));
        }
        let b = self.value(bias).data();
        let out: Vec<F> = self
            .value(a)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out: Vec<F> = self.value(a).data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        self.push(t, Op::Relu(a), &[a])
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same length");
        self.push(t, Op::Softmax(a), &[a])
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gain).len() != d {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).len() != d {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let eps = F::from_f64_lossy(LN_EPS);
        let inv_d = F::one() / F::from_usize(d).expect("width fits");
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let xt = self.value(x);
        let mut out = Vec::with_capacity(xt.len());
        let mut means = Vec::with_capacity(xt.rows());
        let mut rstds = Vec::with_capacity(xt.rows());
        for row in xt.data().chunks(d) {
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rstd = F::one() / (var + eps).sqrt();
            out.extend(
                row.iter()
                    .zip(g.iter().zip(b))
                    .map(|(&v, (&gj, &bj))| (v - mean) * rstd * gj + bj),
            );
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            &[x, gain, bias],
        ))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.matrix(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        let tab = self.value(table);
        let out: Vec<F> = ids.iter().flat_map(|&i| tab.row(i as usize).to_vec()).collect();
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Concatenation along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat of nothing"));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, width], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xt.shape().to_vec(),
                rhs: vec![start, start + len],
            });
        }
        let out: Vec<F> = (0..rows)
            .flat_map(|r| xt.row(r)[start..start + len].to_vec())
            .collect();
        let t = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    /// Column means over rows, as a `1×d` row.
    pub fn mean_pool(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        let inv = F::one() / F::from_usize(rows.max(1)).expect("row count fits");
        let mut out = vec![F::zero(); cols];
        for row in xt.data().chunks(cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        let t = Tensor::new(vec![1, cols], out).expect("sized");
        self.push(t, Op::MeanPool(x), &[x])
    }

    /// Column maxima over rows, as a `1×d` row; ties go to the first row.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.rows() == 0 || xt.is_empty() {
            return Err(Error::invalid("max pool over zero rows"));
        }
        let cols = xt.cols();
        let mut out = xt.row(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..xt.rows() {
            for (c, &v) in xt.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let t = Tensor::new(vec![1, cols], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Inverted dropout; the identity on eval graphs or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
        let n = match &self.nodes[x.0].value {
            Value::Owned(t) => t.len(),
            Value::Param(id) => self.store.get(*id).len(),
        };
        let mask: Vec<F> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xt = self.value(x);
        let out: Vec<F> = xt.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    /// Rows `idx` of `x`, in order.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("row {bad} out of range for {rows} rows")));
        }
        let out: Vec<F> = idx.iter().flat_map(|&i| xt.row(i).to_vec()).collect();
        let t = Tensor::new(vec![idx.len(), cols], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// `base` with rows `idx` replaced by the rows of `update`; all other
    /// rows pass through bit-for-bit.
    pub fn merge_rows(&mut self, base: Var, update: Var, idx: &[usize]) -> Result<Var> {
        let (bt, ut) = (self.value(base), self.value(update));
        if bt.cols() != ut.cols() || ut.rows() != idx.len() {
            return Err(self.mismatch("merge_rows", base, update));
        }
        let cols = bt.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= bt.rows()) {
            return Err(Error::invalid(format!("row {bad} out of range")));
        }
        let mut out = bt.data().to_vec();
        for (k, &i) in idx.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(ut.row(k));
        }
        let t = Tensor::new(bt.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::MergeRows {
                base,
                update,
                idx: idx.to_vec(),
            },
            &[base, update],
        ))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        let (rows, cols) = (lt.rows(), lt.cols());
        if rows != targets.len() || rows == 0 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: lt.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::invalid(format!("target {bad} out of range for {cols} classes")));
        }
        let mut probs = lt.data().to_vec();
        let mut loss = F::zero();
        for (r, row) in lt.data().chunks(cols).enumerate() {
            let lse = log_sum_exp(row);
            loss = loss + lse - row[targets[r]];
            softmax_in_place(&mut probs[r * cols..(r + 1) * cols]);
        }
        let n = F::from_usize(rows).expect("row count fits");
        let t = Tensor::scalar(loss / n);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Backpropagates from a scalar node. A graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<F>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn backward_node(
        &self,
        i: usize,
        g: Vec<F>,
        grads: &mut [Option<Vec<F>>],
        out: &mut Gradients<F>,
    ) {
        let one = F::one();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => out.grads[id.index()] = Some(g),
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.rows(), at.cols(), bt.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    F::gemm(n, m, k, &g, (m, 1), bt.data(), (1, m), one, ga, (k, 1));
                }
                if let Some(gb) = self.slot(grads, *b) {
                    F::gemm(k, n, m, at.data(), (1, k), &g, (m, 1), one, gb, (m, 1));
                }
            }
            Op::MatMulNt(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.rows(), at.cols(), bt.rows());
                if let Some(ga) = self.slot(grads, *a) {
                    F::gemm(n, m, k, &g, (m, 1), bt.data(), (k, 1), one, ga, (k, 1));
                }
                if let Some(gb) = self.slot(grads, *b) {
                    F::gemm(m, n, k, &g, (1, m), at.data(), (k, 1), one, gb, (k, 1));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        add_into(gv, &g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, &g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (x, &y) in ga.iter_mut().zip(&g) {
                        *x = *x + y * *s;
                    }
                }
            }
            Op::Relu(a) => {
                let at = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &y), &v) in ga.iter_mut().zip(&g).zip(at.data()) {
                        if v > F::zero() {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = self.value(Var(i));
                let cols = y.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((gr, yr), dr) in g
                        .chunks(cols)
                        .zip(y.data().chunks(cols))
                        .zip(ga.chunks_mut(cols))
                    {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gy), &yy) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + yy * (gy - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let xt = self.value(*x);
                let d = xt.cols();
                let gv = self.value(*gain).data();
                let inv_d = one / F::from_usize(d).expect("width fits");
                let xhat = |r: usize, j: usize| (xt.row(r)[j] - mean[r]) * rstd[r];
                if let Some(gg) = self.slot(grads, *gain) {
                    for (r, gr) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * xhat(r, j);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(d).enumerate() {
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * xhat(r, j);
                        }
                        m1 = m1 * inv_d;
                        m2 = m2 * inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx[r * d + j] = gx[r * d + j] + rstd[r] * (dh - m1 - xhat(r, j) * m2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let width = self.value(Var(i)).cols();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.slot(grads, *p) {
                        for (r, dst) in gp.chunks_mut(w).enumerate() {
                            add_into(dst, &g[r * width + off..r * width + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let w = self.value(Var(i)).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, src) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * cols + start..r * cols + start + w], src);
                    }
                }
            }
            Op::MeanPool(x) => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let inv = one / F::from_usize(xt.rows().max(1)).expect("fits");
                if let Some(gx) = self.slot(grads, *x) {
                    for row in gx.chunks_mut(cols) {
                        for (d, &s) in row.iter_mut().zip(&g) {
                            *d = *d + s * inv;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let cols = self.value(*x).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * cols + c] = gx[r * cols + c] + g[c];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, &s), &m) in gx.iter_mut().zip(&g).zip(mask) {
                        *d = *d + s * m;
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = self.value(*x).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut gx[r * cols..(r + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                }
            }
            Op::MergeRows { base, update, idx } => {
                let cols = self.value(*base).cols();
                if let Some(gb) = self.slot(grads, *base) {
                    let mut replaced = vec![false; gb.len() / cols.max(1)];
                    for &r in idx {
                        replaced[r] = true;
                    }
                    for (r, dst) in gb.chunks_mut(cols).enumerate() {
                        if !replaced[r] {
                            add_into(dst, &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                if let Some(gu) = self.slot(grads, *update) {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut gu[k * cols..(k + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = self.value(*logits).cols();
                let scale = g[0] / F::from_usize(targets.len()).expect("fits");
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..cols {
                            let p = probs[r * cols + c];
                            let y = if c == t { one } else { F::zero() };
                            gl[r * cols + c] = gl[r * cols + c] + (p - y) * scale;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln()
}
