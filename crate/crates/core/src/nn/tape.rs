use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::NnError;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(&value.shape);
        self.params.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.0 {
            for (a, b) in self.params[id.0].grad.data.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(pub Vec<(ParamId, Vec<f64>)>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    /// Keeps `Phi(x)` for the backward pass.
    Gelu(Var, Vec<f64>),
    Conv2d {
        x: Var,
        k: Var,
        cols: Vec<f64>,
        dims: [usize; 5],
    },
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>, bool),
    MeanRows(Var),
    Reshape(Var),
    LogPick(Var, usize, bool),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    floored_logs: usize,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> NnError {
    NnError::Shape(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            floored_logs: 0,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `log_pick` evaluations that hit the probability floor.
    pub fn floored_logs(&self) -> usize {
        self.floored_logs
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => &self.store.get(id).value,
            _ => &n.value,
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        // the value stays in the store; `value` reads it from there
        let v = self.push(Tensor::zeros(&[0]), Op::Param(id), &[]);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Parameter by name; panics on unknown names (a programming error).
    pub fn p(&mut self, name: &str) -> Var {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// `a[.., k] @ b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sb.len() != 2 || self.value(a).cols() != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (self.value(a).rows(), sb[0], sb[1]);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let mut out = Tensor::zeros(&shape);
        gemm_nn(&self.value(a).data, &self.value(b).data, &mut out.data, m, k, n);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m, k] @ b[n, k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[1] {
            return Err(shape_err("matmul_nt", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[0]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nt(&ta.data, &tb.data, &mut out.data, m, k, n);
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("add", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds `b[n]` to every row of `a[.., n]`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.len() != ta.cols() {
            return Err(shape_err("add_bias", &ta.shape, &tb.shape));
        }
        let n = ta.cols();
        let mut out = ta.clone();
        for row in out.data.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&tb.data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Standardizes each row over the last axis (population variance), then
    /// applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let tx = self.value(x);
        let d = tx.cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d || d == 0 {
            return Err(shape_err("layer_norm", &tx.shape, &self.value(gamma).shape));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = Tensor::zeros(&tx.shape);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        for r in 0..rows {
            let row = &tx.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out.data[r * d + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let n = out.cols();
        for row in out.data.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - mx);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Exact GeLU `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut cdf = Vec::with_capacity(out.len());
        for v in out.data.iter_mut() {
            let c = 0.5 * (1.0 + math::erf(*v / SQRT_2));
            cdf.push(c);
            *v *= c;
        }
        self.push(out, Op::Gelu(x, cdf), &[x])
    }

    /// 3x3 cross-correlation, stride 2, zero padding 1, no bias.
    /// `x[ci, h, w]`, `k[co, ci, 3, 3]` -> `[co, ceil(h/2), ceil(w/2)]`.
    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var, NnError> {
        let (tx, tk) = (self.value(x), self.value(k));
        if tx.shape.len() != 3
            || tk.shape.len() != 4
            || tk.shape[1] != tx.shape[0]
            || tk.shape[2] != 3
            || tk.shape[3] != 3
        {
            return Err(shape_err("conv2d", &tx.shape, &tk.shape));
        }
        let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let co = tk.shape[0];
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let cols = im2col(&tx.data, ci, h, w, ho, wo);
        let mut out = Tensor::zeros(&[co, ho, wo]);
        gemm_nn(&tk.data, &cols, &mut out.data, co, ci * 9, ho * wo);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                k,
                cols,
                dims: [ci, h, w, ho, wo],
            },
            &[x, k],
        ))
    }

    /// `out.data[i] = x.data[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var, NnError> {
        let tx = self.value(x);
        if idx.len() != shape.iter().product::<usize>() || idx.iter().any(|&i| i >= tx.len()) {
            return Err(shape_err("gather", &tx.shape, shape));
        }
        let data = idx.iter().map(|&i| tx.data[i]).collect();
        let out = Tensor {
            shape: shape.to_vec(),
            data,
        };
        Ok(self.push(out, Op::Gather(x, idx), &[x]))
    }

    /// 2-D transpose via gather.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).shape.clone();
        if s.len() != 2 {
            return Err(NnError::Shape(format!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let idx = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, idx, &[c, r])
    }

    /// Stacks 2-D parts along rows (`by_rows`) or columns.
    pub fn concat(&mut self, parts: &[Var], by_rows: bool) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(NnError::Shape("concat of zero parts".into()));
        }
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| (self.value(p).rows(), self.value(p).cols()))
            .collect();
        let out = if by_rows {
            let c = shapes[0].1;
            if let Some(bad) = shapes.iter().find(|s| s.1 != c) {
                return Err(shape_err("concat rows", &[shapes[0].0, c], &[bad.0, bad.1]));
            }
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(&self.value(p).data);
            }
            Tensor {
                shape: vec![data.len() / c.max(1), c],
                data,
            }
        } else {
            let r = shapes[0].0;
            if let Some(bad) = shapes.iter().find(|s| s.0 != r) {
                return Err(shape_err("concat cols", &[r, shapes[0].1], &[bad.0, bad.1]));
            }
            let total: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = vec![0.0; r * total];
            let mut off = 0;
            for (&p, &(_, c)) in parts.iter().zip(&shapes) {
                let src = &self.value(p).data;
                for i in 0..r {
                    data[i * total + off..i * total + off + c]
                        .copy_from_slice(&src[i * c..(i + 1) * c]);
                }
                off += c;
            }
            Tensor {
                shape: vec![r, total],
                data,
            }
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), by_rows), parts))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        let c = t.cols();
        if start + len > t.rows() {
            return Err(NnError::Shape(format!(
                "rows {start}..{} out of range for {:?}",
                start + len,
                t.shape
            )));
        }
        self.gather(x, (start * c..(start + len) * c).collect(), &[len, c])
    }

    /// Column mean of a matrix, as `[1, d]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(&[1, c]);
        for row in t.data.chunks(c) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.data.iter_mut().for_each(|v| *v /= r as f64);
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", &t.shape, shape));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `ln(max(x[idx], floor))` as a scalar. Floored evaluations are counted.
    pub fn log_pick(&mut self, x: Var, idx: usize, floor: f64) -> Result<Var, NnError> {
        let t = self.value(x);
        if idx >= t.len() {
            return Err(NnError::Shape(format!("index {idx} out of range for {:?}", t.shape)));
        }
        let p = t.data[idx];
        let floored = !(p > floor);
        if floored {
            self.floored_logs += 1;
        }
        let out = Tensor::scalar(math::ln(if floored { floor } else { p }));
        Ok(self.push(out, Op::LogPick(x, idx, floored), &[x]))
    }

    /// `sum_i w_i * x_i` over one-element vars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, NnError> {
        let mut acc = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(NnError::Shape(format!("weighted_sum term has shape {:?}", t.shape)));
            }
            acc += w * t.data[0];
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), &vars))
    }

    /// Reverse pass from a one-element `loss`; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = (0..n).map(|_| Vec::new()).collect();
        grads[loss.0] = vec![1.0; self.value(loss).len()];
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = core::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads, &mut out);
        }
        out.sort_by_key(|(id, _): &(ParamId, Vec<f64>)| *id);
        Gradients(out)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Vec<f64>],
        params: &mut Vec<(ParamId, Vec<f64>)>,
    ) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| self.value(v);
        // lazily allocated gradient slot for an input
        fn slot<'a>(grads: &'a mut [Vec<f64>], v: Var, len: usize) -> &'a mut Vec<f64> {
            let s = &mut grads[v.0];
            if s.is_empty() {
                s.resize(len, 0.0);
            }
            s
        }
        match &nodes[i].op {
            Op::Input => {}
            Op::Param(id) => params.push((*id, g.to_vec())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), tb.shape[0], tb.shape[1]);
                if needs(*a) {
                    gemm_nt(g, &tb.data, slot(grads, *a, m * k), m, n, k);
                }
                if needs(*b) {
                    gemm_tn(&ta.data, g, slot(grads, *b, k * n), k, m, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[0]);
                if needs(*a) {
                    gemm_nn(g, &tb.data, slot(grads, *a, m * k), m, n, k);
                }
                if needs(*b) {
                    gemm_tn(g, &ta.data, slot(grads, *b, n * k), n, m, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let s = slot(grads, v, g.len());
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddBias(a, b) => {
                if needs(*a) {
                    let s = slot(grads, *a, g.len());
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if needs(*b) {
                    let n = val(*b).len();
                    let s = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let s = slot(grads, *a, g.len());
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*gamma).len();
                let gm = &val(*gamma).data;
                if needs(*gamma) {
                    let s = slot(grads, *gamma, d);
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            s[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if needs(*beta) {
                    let s = slot(grads, *beta, d);
                    for grow in g.chunks(d) {
                        s.iter_mut().zip(grow).for_each(|(x, y)| *x += y);
                    }
                }
                if needs(*x) {
                    let s = slot(grads, *x, g.len());
                    let mut dh = vec![0.0; d];
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..d {
                            dh[c] = grow[c] * gm[c];
                            m1 += dh[c];
                            m2 += dh[c] * hrow[c];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for c in 0..d {
                            s[r * d + c] += rstd[r] * (dh[c] - m1 - hrow[c] * m2);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let y = &nodes[i].value;
                    let n = y.cols();
                    let s = slot(grads, *x, g.len());
                    for ((srow, yrow), grow) in s.chunks_mut(n).zip(y.data.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            srow[c] += yrow[c] * (grow[c] - dot);
                        }
                    }
                }
            }
            Op::Gelu(x, cdf) => {
                if needs(*x) {
                    let xs = &val(*x).data;
                    let s = slot(grads, *x, g.len());
                    for k in 0..g.len() {
                        let pdf = INV_SQRT_2PI * math::exp(-0.5 * xs[k] * xs[k]);
                        s[k] += g[k] * (cdf[k] + xs[k] * pdf);
                    }
                }
            }
            Op::Conv2d { x, k, cols, dims } => {
                let [ci, h, w, ho, wo] = *dims;
                let co = val(*k).shape[0];
                let (kk, hw) = (ci * 9, ho * wo);
                if needs(*k) {
                    gemm_nt(g, cols, slot(grads, *k, co * kk), co, hw, kk);
                }
                if needs(*x) {
                    let mut dcols = vec![0.0; kk * hw];
                    gemm_tn(&val(*k).data, g, &mut dcols, kk, co, hw);
                    col2im(&dcols, slot(grads, *x, ci * h * w), ci, h, w, ho, wo);
                }
            }
            Op::Gather(x, idx) => {
                if needs(*x) {
                    let s = slot(grads, *x, val(*x).len());
                    for (k, &j) in idx.iter().enumerate() {
                        s[j] += g[k];
                    }
                }
            }
            Op::Concat(parts, by_rows) => {
                if *by_rows {
                    let mut off = 0;
                    for &p in parts {
                        let len = val(p).len();
                        if needs(p) {
                            let s = slot(grads, p, len);
                            s.iter_mut().zip(&g[off..off + len]).for_each(|(x, y)| *x += y);
                        }
                        off += len;
                    }
                } else {
                    let total = nodes[i].value.cols();
                    let r = nodes[i].value.rows();
                    let mut off = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        if needs(p) {
                            let s = slot(grads, p, r * c);
                            for row in 0..r {
                                for q in 0..c {
                                    s[row * c + q] += g[row * total + off + q];
                                }
                            }
                        }
                        off += c;
                    }
                }
            }
            Op::MeanRows(x) => {
                if needs(*x) {
                    let t = val(*x);
                    let (r, c) = (t.rows(), t.cols());
                    let s = slot(grads, *x, r * c);
                    for row in s.chunks_mut(c) {
                        for q in 0..c {
                            row[q] += g[q] / r as f64;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    let s = slot(grads, *x, g.len());
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::LogPick(x, idx, floored) => {
                if needs(*x) && !*floored {
                    let p = val(*x).data[*idx];
                    let s = slot(grads, *x, val(*x).len());
                    s[*idx] += g[0] / p;
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if needs(v) {
                        slot(grads, v, 1)[0] += w * g[0];
                    }
                }
            }
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::erf(x / SQRT_2))
}

fn im2col(x: &[f64], ci: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let hw = ho * wo;
    let mut cols = vec![0.0; ci * 9 * hw];
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[oy * wo + ox] = x[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], dx: &mut [f64], ci: usize, h: usize, w: usize, ho: usize, wo: usize) {
    let hw = ho * wo;
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c * h + iy as usize) * w + ix as usize] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}
