use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
}

/// How an input of a broadcasting op maps onto output indices.
#[derive(Debug, Clone)]
enum BMap {
    Same,
    Scalar,
    /// Input repeats every `n` output elements (trailing-suffix broadcast).
    Repeat(usize),
    /// Input holds one value per output row of width `c`.
    Column(usize),
    General(Vec<usize>),
}

impl BMap {
    #[inline]
    fn idx(&self, i: usize) -> usize {
        match self {
            BMap::Same => i,
            BMap::Scalar => 0,
            BMap::Repeat(n) => i % n,
            BMap::Column(c) => i / c,
            BMap::General(m) => m[i],
        }
    }

    fn build(out: &[usize], inp: &[usize]) -> Self {
        let n_in: usize = inp.iter().product();
        if out == inp {
            return BMap::Same;
        }
        if n_in == 1 {
            return BMap::Scalar;
        }
        let trimmed = trim_leading_ones(inp);
        if out.ends_with(trimmed) {
            return BMap::Repeat(n_in);
        }
        if out.len() == inp.len() && inp.last() == Some(&1) && inp[..inp.len() - 1] == out[..out.len() - 1] {
            return BMap::Column(*out.last().expect("non-empty shape"));
        }
        // General right-aligned broadcast.
        let rank = out.len();
        let mut strides = vec![0usize; rank];
        let offset = rank - inp.len();
        let mut s = 1;
        for d in (0..inp.len()).rev() {
            strides[d + offset] = if inp[d] == 1 { 0 } else { s };
            s *= inp[d];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        BMap::General(map)
    }
}

fn trim_leading_ones(s: &[usize]) -> &[usize] {
    let k = s.iter().take_while(|&&d| d == 1).count();
    &s[k..]
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(op, a, b),
        };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        amap: BMap,
        bmap: BMap,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddScalar {
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Slice {
        x: Var,
        outer: usize,
        inner: usize,
        axis_len: usize,
        start: usize,
        end: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SumLast {
        x: Var,
        cols: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations eagerly and replays them backwards.
///
/// Parameters are referenced by id rather than copied; their gradients are
/// accumulated into a caller-owned [`GradStore`] during [`Tape::backward`].
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    frozen: Vec<bool>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            frozen: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            frozen: vec![false; store.len()],
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Stop gradients from flowing into the given parameter.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("tape created without a parameter store");
        assert!(id.0 < store.len(), "unknown parameter id");
        let requires_grad = !self.frozen[id.0];
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass for a non-parameter node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- elementwise binary ops with broadcasting -------------------------

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Maximum => "max",
        };
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let amap = BMap::build(&out_shape, self.shape(a));
        let bmap = BMap::build(&out_shape, self.shape(b));
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (self.data(a), self.data(b));
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
            BinaryKind::Maximum => |x, y| if x >= y { x } else { y },
        };
        let data: Vec<f64> = match (&amap, &bmap) {
            (BMap::Same, BMap::Same) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n)
                .map(|i| f(ad[amap.idx(i)], bd[bmap.idx(i)]))
                .collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(
            t,
            Op::Binary {
                kind,
                a,
                b,
                amap,
                bmap,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Maximum, a, b)
    }

    /// Elementwise minimum, expressed as `-max(-a, -b)`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.scale(a, -1.0);
        let nb = self.scale(b, -1.0);
        let m = self.maximum(na, nb)?;
        Ok(self.scale(m, -1.0))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let data = self.data(x).iter().map(|v| v + c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::AddScalar { x }, rg)
    }

    // ---- unary ------------------------------------------------------------

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xd = self.data(x);
        let data: Vec<f64> = match kind {
            UnaryKind::Exp => xd.iter().map(|v| v.exp()).collect(),
            UnaryKind::Log => {
                if let Some(bad) = xd.iter().find(|&&v| v <= 0.0) {
                    return invalid("log", format!("non-positive input {bad}"));
                }
                xd.iter().map(|v| v.ln()).collect()
            }
            UnaryKind::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Tanh => xd.iter().map(|v| v.tanh()).collect(),
            UnaryKind::Relu => xd.iter().map(|&v| v.max(0.0)).collect(),
        };
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Unary { kind, x }, rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x).expect("tanh is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x).expect("relu is total")
    }

    // ---- linear algebra ---------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), (k, 1), self.data(b), (n, 1), &mut out);
        let rg = self.rg(a) || self.rg(b);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return invalid("transpose", format!("expected a matrix, got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = xd[i * cols + j];
            }
        }
        let rg = self.rg(x);
        let t = Tensor::new(vec![cols, rows], out)?;
        Ok(self.push(t, Op::Transpose { x, rows, cols }, rg))
    }

    // ---- normalisation ----------------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Softmax { x }, rg)
    }

    /// Normalise each row of the last axis to zero mean and unit variance.
    /// No affine transform; compose with `mul`/`add` for gain and bias.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut out = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(v.rows());
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::LayerNorm { x, inv_std }, rg)
    }

    // ---- indexing ---------------------------------------------------------

    /// Rows of a `[rows, dim]` table selected by `ids`, giving `[ids.len(), dim]`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return invalid("embedding_gather", format!("table must be 2-D, got {s:?}"));
        }
        let (rows, dim) = (s[0], s[1]);
        if ids.is_empty() {
            return invalid("embedding_gather", "empty id list");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return invalid(
                "embedding_gather",
                format!("id {bad} out of range for table with {rows} rows"),
            );
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&td[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(table);
        let t = Tensor::new(vec![ids.len(), dim], out)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => return invalid("concat", "no inputs"),
        };
        if axis >= first.len() {
            return invalid("concat", format!("axis {axis} out of range for {first:?}"));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total = 0;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return shape_err("concat", &first, s);
            }
            total += s[axis];
            lens.push(s[axis]);
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let d = self.data(p);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.iter().copied().zip(lens).collect(),
                outer,
                inner,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {s:?}"),
            );
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let axis_len = s[axis];
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * axis_len * inner;
            out.extend_from_slice(&xd[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(x);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Slice {
                x,
                outer,
                inner,
                axis_len,
                start,
                end,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Sum over the last axis, keeping it as a dimension of size 1.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let cols = v.cols();
        let out: Vec<f64> = v.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = 1;
        let t = Tensor::new(shape, out).expect("consistent shape");
        let rg = self.rg(x);
        self.push(t, Op::SumLast { x, cols }, rg)
    }

    // ---- stochastic -------------------------------------------------------

    /// Inverted dropout with keep-probability `1 - p`; identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return invalid("dropout", format!("probability {p} outside [0, 1)"));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode pass from a scalar `loss`. Gradients of parameters are
    /// added into `param_grads` (scaled by `scale`); gradients of other leaves
    /// are available through [`Tape::grad`].
    pub fn backward_scaled(
        &mut self,
        loss: Var,
        param_grads: Option<&mut GradStore>,
        scale: f64,
    ) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![scale]);
        let mut sink = Sink {
            grads,
            params: param_grads,
        };
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].op {
                Op::Leaf => continue,
                Op::Param(_) => continue,
                _ => match sink.grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(i, &g, &mut sink);
        }
        self.grads = sink.grads;
        Ok(())
    }

    pub fn backward(&mut self, loss: Var, param_grads: Option<&mut GradStore>) -> Result<()> {
        self.backward_scaled(loss, param_grads, 1.0)
    }

    fn backprop_node(&self, i: usize, g: &[f64], sink: &mut Sink<'_>) {
        let node = &self.nodes[i];
        let out = match &node.value {
            Value::Owned(t) => t.data(),
            Value::Param(_) => unreachable!("parameters are leaves"),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Binary {
                kind,
                a,
                b,
                amap,
                bmap,
            } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    let da = self.grad_buf(*a, sink);
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => {
                            for (k, &gk) in g.iter().enumerate() {
                                da[amap.idx(k)] += gk;
                            }
                        }
                        BinaryKind::Mul => {
                            for (k, &gk) in g.iter().enumerate() {
                                da[amap.idx(k)] += gk * bd[bmap.idx(k)];
                            }
                        }
                        BinaryKind::Div => {
                            for (k, &gk) in g.iter().enumerate() {
                                da[amap.idx(k)] += gk / bd[bmap.idx(k)];
                            }
                        }
                        BinaryKind::Maximum => {
                            for (k, &gk) in g.iter().enumerate() {
                                if ad[amap.idx(k)] >= bd[bmap.idx(k)] {
                                    da[amap.idx(k)] += gk;
                                }
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let db = self.grad_buf(*b, sink);
                    match kind {
                        BinaryKind::Add => {
                            for (k, &gk) in g.iter().enumerate() {
                                db[bmap.idx(k)] += gk;
                            }
                        }
                        BinaryKind::Sub => {
                            for (k, &gk) in g.iter().enumerate() {
                                db[bmap.idx(k)] -= gk;
                            }
                        }
                        BinaryKind::Mul => {
                            for (k, &gk) in g.iter().enumerate() {
                                db[bmap.idx(k)] += gk * ad[amap.idx(k)];
                            }
                        }
                        BinaryKind::Div => {
                            for (k, &gk) in g.iter().enumerate() {
                                let bv = bd[bmap.idx(k)];
                                db[bmap.idx(k)] -= gk * ad[amap.idx(k)] / (bv * bv);
                            }
                        }
                        BinaryKind::Maximum => {
                            for (k, &gk) in g.iter().enumerate() {
                                if ad[amap.idx(k)] < bd[bmap.idx(k)] {
                                    db[bmap.idx(k)] += gk;
                                }
                            }
                        }
                    }
                }
            }
            Op::Unary { kind, x } => {
                let xd = self.data(*x);
                let dx = self.grad_buf(*x, sink);
                match kind {
                    UnaryKind::Exp => {
                        for k in 0..g.len() {
                            dx[k] += g[k] * out[k];
                        }
                    }
                    UnaryKind::Log => {
                        for k in 0..g.len() {
                            dx[k] += g[k] / xd[k];
                        }
                    }
                    UnaryKind::Sigmoid => {
                        for k in 0..g.len() {
                            dx[k] += g[k] * out[k] * (1.0 - out[k]);
                        }
                    }
                    UnaryKind::Tanh => {
                        for k in 0..g.len() {
                            dx[k] += g[k] * (1.0 - out[k] * out[k]);
                        }
                    }
                    UnaryKind::Relu => {
                        for k in 0..g.len() {
                            if xd[k] > 0.0 {
                                dx[k] += g[k];
                            }
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                let dx = self.grad_buf(*x, sink);
                for (d, gk) in dx.iter_mut().zip(g) {
                    *d += gk * factor;
                }
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                let dx = self.grad_buf(*x, sink);
                for (d, gk) in dx.iter_mut().zip(g) {
                    *d += gk;
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.rg(*a) {
                    let bd = self.data(*b);
                    let da = self.grad_buf(*a, sink);
                    // dA[m,k] += G[m,n] * B^T[n,k]
                    gemm_acc(m, n, k, g, (n, 1), bd, (1, n), da);
                }
                if self.rg(*b) {
                    let ad = self.data(*a);
                    let db = self.grad_buf(*b, sink);
                    // dB[k,n] += A^T[k,m] * G[m,n]
                    gemm_acc(k, m, n, ad, (1, k), g, (n, 1), db);
                }
            }
            Op::Transpose { x, rows, cols } => {
                let dx = self.grad_buf(*x, sink);
                for i in 0..*rows {
                    for j in 0..*cols {
                        dx[i * cols + j] += g[j * rows + i];
                    }
                }
            }
            Op::Softmax { x } => {
                let c = self.value(*x).cols();
                let dx = self.grad_buf(*x, sink);
                for ((gr, yr), dr) in g.chunks(c).zip(out.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let c = self.value(*x).cols();
                let dx = self.grad_buf(*x, sink);
                let cf = c as f64;
                for (r, ((gr, yr), dr)) in g
                    .chunks(c)
                    .zip(out.chunks(c))
                    .zip(dx.chunks_mut(c))
                    .enumerate()
                {
                    let mg = gr.iter().sum::<f64>() / cf;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cf;
                    for j in 0..c {
                        dr[j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let dim = self.value(*table).cols();
                let dt = self.grad_buf(*table, sink);
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g[r * dim..(r + 1) * dim];
                    let dst = &mut dt[id * dim..(id + 1) * dim];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = parts.iter().map(|(_, l)| l).sum();
                let mut offset = 0;
                for &(p, len) in parts {
                    if self.rg(p) {
                        let dp = self.grad_buf(p, sink);
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut dp[o * len * inner..(o + 1) * len * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice {
                x,
                outer,
                inner,
                axis_len,
                start,
                end,
            } => {
                let w = end - start;
                let dx = self.grad_buf(*x, sink);
                for o in 0..*outer {
                    let base = o * axis_len * inner;
                    let dst = &mut dx[base + start * inner..base + end * inner];
                    let src = &g[o * w * inner..(o + 1) * w * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::Sum { x } => {
                let dx = self.grad_buf(*x, sink);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { x } => {
                let dx = self.grad_buf(*x, sink);
                let s = g[0] / dx.len() as f64;
                dx.iter_mut().for_each(|d| *d += s);
            }
            Op::SumLast { x, cols } => {
                let dx = self.grad_buf(*x, sink);
                for (r, row) in dx.chunks_mut(*cols).enumerate() {
                    row.iter_mut().for_each(|d| *d += g[r]);
                }
            }
            Op::Dropout { x, mask } => {
                let dx = self.grad_buf(*x, sink);
                for k in 0..g.len() {
                    dx[k] += g[k] * mask[k];
                }
            }
        }
    }

    fn grad_buf<'s>(&self, v: Var, sink: &'s mut Sink<'_>) -> &'s mut [f64] {
        if let Op::Param(id) = self.nodes[v.0].op {
            let store = sink
                .params
                .as_deref_mut()
                .expect("parameter gradients requested without a GradStore");
            return store.get_mut(id);
        }
        let len = self.value(v).len();
        sink.grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

struct Sink<'g> {
    grads: Vec<Option<Vec<f64>>>,
    params: Option<&'g mut GradStore>,
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b` with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
) {
    gemm_beta(m, k, n, a, sa, b, sb, c, 0.0);
}

/// `c += a * b`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
) {
    gemm_beta(m, k, n, a, sa, b, sb, c, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn gemm_beta(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index reachable through the
    // given dimensions and strides, which describe dense row- or
    // column-major views of `a`, `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3]));
        let y = t.softmax(x);
        assert!(close(t.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 30.0, 0.5, 0.5, -700.0]).unwrap());
        let y = t.softmax(x);
        for r in t.value(y).data().chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 5], 4.2));
        let y = t.layer_norm(x, 1e-5);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_by_hand() {
        // [[1,2,3],[4,5,6]] x [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = t.constant(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[58., 64., 139., 154.]);
        assert_eq!(t.shape(c), &[2, 2]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3], vec![1., -2., 5.]).unwrap(), true);
        let s = t.sum(x);
        t.backward(s, None).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1., 1., 1.]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![1., 2.]).unwrap(), true);
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        t.backward(s, None).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2., 4.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(
            t.backward(x, None),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn broadcasting_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let row = t.constant(Tensor::new(vec![3], vec![10., 20., 30.]).unwrap());
        let col = t.constant(Tensor::new(vec![2, 1], vec![100., 200.]).unwrap());
        let s = t.add(a, row).unwrap();
        assert_eq!(t.value(s).data(), &[11., 22., 33., 14., 25., 36.]);
        let s = t.add(a, col).unwrap();
        assert_eq!(t.value(s).data(), &[101., 102., 103., 204., 205., 206.]);
        let bad = t.constant(Tensor::zeros(&[2]));
        assert!(t.add(a, bad).is_err());
    }

    #[test]
    fn general_broadcast_matches_manual() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 1, 3], (0..6).map(f64::from).collect()).unwrap());
        let b = t.constant(Tensor::new(vec![2, 1], vec![10., 20.]).unwrap());
        let s = t.add(a, b).unwrap();
        assert_eq!(t.shape(s), &[2, 2, 3]);
        assert_eq!(
            t.value(s).data(),
            &[10., 11., 12., 20., 21., 22., 13., 14., 15., 23., 24., 25.]
        );
    }

    #[test]
    fn gather_out_of_range() {
        let mut t = Tape::new();
        let table = t.constant(Tensor::zeros(&[4, 2]));
        assert!(t.embedding_gather(table, &[1, 4]).is_err());
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 1], vec![5., 6.]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = t.slice(c, 1, 2, 3).unwrap();
        assert_eq!(t.value(s).data(), &[5., 6.]);
        let r = t.slice(c, 0, 1, 2).unwrap();
        assert_eq!(t.value(r).data(), &[3., 4., 6.]);
    }

    #[test]
    fn dropout_zero_is_identity_and_seeded() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[100]));
        assert_eq!(t.dropout(x, 0.0, 1).unwrap(), x);
        let a = t.dropout(x, 0.5, 7).unwrap();
        let b = t.dropout(x, 0.5, 7).unwrap();
        assert_eq!(t.value(a), t.value(b));
        let kept = t.value(a).data().iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 25 && kept < 75);
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.1, 0.7]).unwrap())
            .unwrap();
        let run = || {
            let mut grads = GradStore::zeros_like(&store);
            let mut t = Tape::with_params(&store);
            let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
            let wv = t.param(w);
            let y = t.matmul(x, wv).unwrap();
            let y = t.tanh(y);
            let l = t.sum(y);
            t.backward(l, Some(&mut grads)).unwrap();
            grads.get(w).to_vec()
        };
        assert_eq!(run(), run());
    }
}
