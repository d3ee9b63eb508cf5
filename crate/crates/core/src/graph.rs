//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse sweep.
//!
//! Leaf gradients persist on the graph and accumulate across `backward`
//! calls until [`Graph::zero_grad`] is called.

use std::collections::HashMap;

use crate::error::{dim_err, param_err, Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{matmul_nt_acc, matmul_raw, matmul_tn_acc, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Gather(Var, Vec<Option<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Transpose(..) => "transpose",
            Op::Softmax(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Gather(..) => "gather",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    check_finite: bool,
    frozen_params: bool,
    params: HashMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that rejects any non-finite intermediate value.
    pub fn checked() -> Self {
        Self {
            check_finite: true,
            ..Self::default()
        }
    }

    /// Graph whose parameters do not require gradients (inference).
    pub fn inference() -> Self {
        Self {
            frozen_params: true,
            ..Self::default()
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers (once) the named parameter of `store` as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let t = store.tensor(idx).clone();
        let v = if self.frozen_params {
            self.constant(t)
        } else {
            self.leaf(t)
        };
        self.params.insert(idx, v);
        Ok(v)
    }

    /// (store index, var) of every parameter registered on this graph.
    pub fn param_vars(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&i, &v)| (i, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err!("matmul inner extents differ: {m}×{k} · {k2}×{n}"));
        }
        let c = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`n` vector to every row of an m×n matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(bias).len() != n {
            return Err(dim_err!(
                "add_row: bias of {} values for {n} columns",
                self.value(bias).len()
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect())?;
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// x + c for a constant tensor c of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(dim_err!("add_const: {:?} vs {:?}", self.shape(x), c.shape()));
        }
        let v = self.value(x);
        let data = v.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::AddConst(x), rg)
    }

    /// x ⊙ c for a constant tensor c of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(dim_err!("mul_const: {:?} vs {:?}", self.shape(x), c.shape()));
        }
        let v = self.value(x);
        let data = v.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::MulConst(x, c.data().to_vec()), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Row softmax where columns with `masked[j] == true` are treated as
    /// −∞ logits: they receive weight exactly 0. A row whose every column is
    /// masked yields all zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, masked: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(masked))
    }

    fn softmax_impl(&mut self, x: Var, masked: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(mask) = masked {
            if mask.len() != n {
                return Err(dim_err!("softmax mask has {} entries for {n} columns", mask.len()));
            }
        }
        let keep = |j: usize| masked.map_or(true, |mk| !mk[j]);
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let out = &mut data[i * n..(i + 1) * n];
            let mx = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(j) {
                    out[j] = (row[j] - mx).exp();
                    z += out[j];
                }
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![m, n], data)?, Op::Softmax(x), rg)
    }

    /// Per-row normalization followed by the affine map `gamma·x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.value(x).dims2()?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(dim_err!("layer_norm: affine params must have {d} values"));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::new(vec![m, d], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// GELU, tanh approximation:
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| 0.5 * a * (1.0 + (SQRT_2_OVER_PI * (a + GELU_CUBIC * a * a * a)).tanh()))
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0;
    /// otherwise survivors are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(param_err!("dropout rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if rng.next_f64() < rate { 0.0 } else { keep });
        self.mul_const(x, &mask)
    }

    /// x·W + b for x: L×a, W: a×b, b: b.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// out[i] = x[index[i]] (flat indices), or 0 where the index is `None`.
    pub fn gather(&mut self, x: Var, index: Vec<Option<usize>>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(bad) = index.iter().flatten().find(|&&j| j >= src.len()) {
            return Err(dim_err!("gather index {bad} out of range {}", src.len()));
        }
        let data = index.iter().map(|j| j.map_or(0.0, |j| src[j])).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Gather(x, index), rg)
    }

    /// Rows `rows` of a matrix, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(bad) = rows.iter().find(|&&r| r >= m) {
            return Err(dim_err!("row {bad} out of range {m}"));
        }
        let index = rows
            .iter()
            .flat_map(|&r| (0..n).map(move |j| Some(r * n + j)))
            .collect();
        self.gather(x, index, &[rows.len(), n])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if width == 0 || start + width > n {
            return Err(dim_err!("column slice {start}..{} of {n}", start + width));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + width]);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![m, width], data)?, Op::SliceCols(x, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<Vec<_>>>()?;
        let m = dims.first().ok_or_else(|| dim_err!("concat of nothing"))?.0;
        if dims.iter().any(|d| d.0 != m) {
            return Err(dim_err!("concat_cols: row counts differ {dims:?}"));
        }
        let n: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &(_, w)) in parts.iter().zip(&dims) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![m, n], data)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<Vec<_>>>()?;
        let n = dims.first().ok_or_else(|| dim_err!("concat of nothing"))?.1;
        if dims.iter().any(|d| d.1 != n) {
            return Err(dim_err!("concat_rows: column counts differ {dims:?}"));
        }
        let m: usize = dims.iter().map(|d| d.0).sum();
        let mut data = Vec::with_capacity(m * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar root. Leaf gradients are added to any
    /// gradient already stored for them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            macro_rules! acc {
                ($v:expr) => {
                    slot(&mut grads, nodes, $v)
                };
            }
            match &node.op {
                Op::Input => {
                    let slot = self
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for (s, d) in slot.iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[a.0].value.dims2()?;
                    let n = nodes[b.0].value.dims2()?.1;
                    if let Some(ga) = acc!(*a) {
                        matmul_nt_acc(ga, &g, nodes[b.0].value.data(), m, n, k);
                    }
                    if let Some(gb) = acc!(*b) {
                        matmul_tn_acc(gb, nodes[a.0].value.data(), &g, m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    if let Some(ga) = acc!(*a) {
                        add_into(ga, &g);
                    }
                    if let Some(gb) = acc!(*b) {
                        add_into(gb, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = acc!(*a) {
                        add_into(ga, &g);
                    }
                    if let Some(gb) = acc!(*b) {
                        for (s, d) in gb.iter_mut().zip(&g) {
                            *s -= d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(ga) = acc!(*a) {
                        for ((s, d), y) in ga.iter_mut().zip(&g).zip(nodes[b.0].value.data()) {
                            *s += d * y;
                        }
                    }
                    if let Some(gb) = acc!(*b) {
                        for ((s, d), x) in gb.iter_mut().zip(&g).zip(nodes[a.0].value.data()) {
                            *s += d * x;
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    let n = nodes[b.0].value.len();
                    if let Some(gx) = acc!(*x) {
                        add_into(gx, &g);
                    }
                    if let Some(gb) = acc!(*b) {
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = acc!(*x) {
                        for (s, d) in gx.iter_mut().zip(&g) {
                            *s += c * d;
                        }
                    }
                }
                Op::AddConst(x) => {
                    if let Some(gx) = acc!(*x) {
                        add_into(gx, &g);
                    }
                }
                Op::MulConst(x, c) => {
                    if let Some(gx) = acc!(*x) {
                        for ((s, d), k) in gx.iter_mut().zip(&g).zip(c) {
                            *s += d * k;
                        }
                    }
                }
                Op::Transpose(x) => {
                    let (m, n) = nodes[x.0].value.dims2()?;
                    if let Some(gx) = acc!(*x) {
                        for i in 0..m {
                            for j in 0..n {
                                gx[i * n + j] += g[j * m + i];
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let n = node.value.dims2()?.1;
                    if let Some(gx) = acc!(*x) {
                        for ((gr, yr), dr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                gr[j] += yr[j] * (dr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = nodes[gamma.0].value.len();
                    let gam = nodes[gamma.0].value.data();
                    if let Some(gg) = acc!(*gamma) {
                        for (dr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                gg[j] += dr[j] * hr[j];
                            }
                        }
                    }
                    if let Some(gb) = acc!(*beta) {
                        for dr in g.chunks(d) {
                            add_into(gb, dr);
                        }
                    }
                    if let Some(gx) = acc!(*x) {
                        for (r, ((gr, dr), hr)) in
                            gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                        {
                            let dh: Vec<f64> = (0..d).map(|j| dr[j] * gam[j]).collect();
                            let mean_dh = dh.iter().sum::<f64>() / d as f64;
                            let mean_dhh =
                                dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                gr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dhh);
                            }
                        }
                    }
                }
                Op::Gelu(x) => {
                    if let Some(gx) = acc!(*x) {
                        for ((s, d), &a) in gx.iter_mut().zip(&g).zip(nodes[x.0].value.data()) {
                            let u = SQRT_2_OVER_PI * (a + GELU_CUBIC * a * a * a);
                            let t = u.tanh();
                            let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * a * a);
                            *s += d * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du);
                        }
                    }
                }
                Op::Gather(x, index) => {
                    if let Some(gx) = acc!(*x) {
                        for (d, j) in g.iter().zip(index) {
                            if let Some(j) = j {
                                gx[*j] += d;
                            }
                        }
                    }
                }
                Op::SliceCols(x, start) => {
                    let (m, n) = nodes[x.0].value.dims2()?;
                    let w = node.value.dims2()?.1;
                    if let Some(gx) = acc!(*x) {
                        for r in 0..m {
                            add_into(&mut gx[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = node.value.dims2()?;
                    let mut off = 0;
                    for p in parts {
                        let w = nodes[p.0].value.dims2()?.1;
                        if let Some(gp) = acc!(*p) {
                            for r in 0..m {
                                add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + off..r * n + off + w]);
                            }
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(gp) = acc!(*p) {
                            add_into(gp, &g[off..off + len]);
                        }
                        off += len;
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = acc!(*x) {
                        for s in gx.iter_mut() {
                            *s += g[0];
                        }
                    }
                }
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    if let Some(gx) = acc!(*x) {
                        for s in gx.iter_mut() {
                            *s += g[0] / n;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf; zeros for a differentiable leaf the
    /// root does not depend on, `None` for constants and interior nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Input) {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match self.leaf_grads.get(&v.0) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        })
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
