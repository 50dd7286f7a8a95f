//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! enough information to push gradients back to its inputs. Nodes are only ever
//! appended, so index order is a topological order and `backward` is a single
//! reverse sweep.

use std::collections::BTreeMap;

use crate::error::TensorError;
use crate::tensor::{Parameters, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Ln {
        input: Var,
        lo: f64,
        hi: f64,
    },
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<(), TensorError> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(TensorError::NonFinite { op, value }),
        None => Ok(()),
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// `out += a[m×k] · b[k×n]`
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m×k] · b[n×k]ᵀ`
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a[k×m]ᵀ · b[k×n]`
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var, TensorError> {
        debug_assert_eq!(rows * cols, value.len());
        check_finite(op_name, &value)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, tensor: &Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        if tensor.shape().len() > 2 {
            return Err(mismatch(
                "leaf",
                format!("graph tensors are at most 2-D, got {:?}", tensor.shape()),
            ));
        }
        check_finite("leaf", tensor.values())?;
        self.nodes.push(Node {
            rows: tensor.rows(),
            cols: tensor.cols(),
            value: tensor.values().to_vec(),
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, tensor: &Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor, false)
    }

    /// A free variable whose gradient is tracked.
    pub fn variable(&mut self, tensor: &Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor, true)
    }

    pub fn matrix(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Var, TensorError> {
        let t = Tensor::matrix(rows, cols, values)?;
        self.constant(&t)
    }

    /// Bring a named parameter onto the tape (once per graph).
    pub fn param(&mut self, params: &Parameters, name: &str) -> Result<Var, TensorError> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let v = self.leaf(t, t.requires_grad)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts(vec![n.rows, n.cols], n.value.clone())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter brought in through [`Graph::param`].
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(name, v)| {
                let g = self
                    .grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
                (name.clone(), g)
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(mismatch("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", m, n, out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(mismatch("matmul_t", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul_t", m, n, out, Op::MatMulTransB(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push("add", r, c, out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        self.push("sub", r, c, out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push("mul", r, c, out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `[1, n]` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(mismatch(
                "add_row",
                format!("{r}x{c} + {:?}", self.shape(b)),
            ));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        self.push("add_row", r, c, out, Op::AddRow(a, b), &[a, b])
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        self.push("affine", r, c, out, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        self.affine(x, s, 0.0)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(name, r, c, out, op, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        self.unary(
            "ln",
            x,
            |v| v.clamp(lo, hi).ln(),
            Op::Ln { input: x, lo, hi },
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.softmax_rows_masked(x, None)
    }

    /// Row-wise softmax where `mask[r * cols + c] == false` forces a zero weight.
    pub fn softmax_rows_masked(
        &mut self,
        x: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(mismatch(
                    "softmax",
                    format!("mask len {} for {r}x{c}", m.len()),
                ));
            }
        }
        let allowed = |i: usize| mask.is_none_or(|m| m[i]);
        let xs = self.value(x);
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let base = row * c;
            let max = (0..c)
                .filter(|&j| allowed(base + j))
                .map(|j| xs[base + j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMasked { row });
            }
            let mut total = 0.0;
            for j in 0..c {
                if allowed(base + j) {
                    let e = (xs[base + j] - max).exp();
                    out[base + j] = e;
                    total += e;
                }
            }
            for v in &mut out[base..base + c] {
                *v /= total;
            }
        }
        self.push("softmax", r, c, out, Op::Softmax(x), &[x])
    }

    /// Row-wise layer normalization with a learned `[1, d]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, d) = self.shape(x);
        if self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(mismatch("layer_norm", format!("input {r}x{d}")));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for row in 0..r {
            let s = &xs[row * d..(row + 1) * d];
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[row] = is;
            for j in 0..d {
                let h = (s[j] - mean) * is;
                xhat[row * d + j] = h;
                out[row * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            r,
            d,
            out,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let xs = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xs[i * c + j];
            }
        }
        self.push("transpose", c, r, out, Op::Transpose(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: start + len,
                len: c,
            });
        }
        let out = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push(
            "slice_cols",
            r,
            len,
            out,
            Op::SliceCols { input: x, start },
            &[x],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or(TensorError::Empty { op: "concat_cols" })?;
        let r = self.shape(first).0;
        if parts.iter().any(|p| self.shape(*p).0 != r) {
            return Err(mismatch("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for p in parts {
                let c = self.shape(*p).1;
                out.extend_from_slice(&self.value(*p)[row * c..(row + 1) * c]);
            }
        }
        self.push(
            "concat_cols",
            r,
            total,
            out,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or(TensorError::Empty { op: "concat_rows" })?;
        let c = self.shape(first).1;
        if parts.iter().any(|p| self.shape(*p).1 != c) {
            return Err(mismatch("concat_rows", "column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|p| self.shape(*p).0).sum();
        let mut out = Vec::with_capacity(rows * c);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        self.push(
            "concat_rows",
            rows,
            c,
            out,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            out.extend_from_slice(&self.value(x)[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            indices.len(),
            c,
            out,
            Op::GatherRows(x, indices.to_vec()),
            &[x],
        )
    }

    /// Picks individual `(row, col)` entries into a `[1, n]` row.
    pub fn pick(&mut self, x: Var, at: &[(usize, usize)]) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(at.len());
        for &(i, j) in at {
            if i >= r || j >= c {
                return Err(TensorError::OutOfRange {
                    op: "pick",
                    index: i * c + j,
                    len: r * c,
                });
            }
            out.push(self.value(x)[i * c + j]);
        }
        self.push("pick", 1, at.len(), out, Op::Pick(x, at.to_vec()), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.value(x).iter().sum();
        self.push("sum", 1, 1, vec![total], Op::Sum(x), &[x])
    }

    /// Populate gradients of `loss` with respect to every reachable node.
    ///
    /// A graph can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NotScalar(vec![r, c]));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                check_finite("backward", g).map_err(|_| TensorError::NonFinite {
                    op: op_name(&self.nodes[idx].op),
                    value: g
                        .iter()
                        .copied()
                        .find(|v| !v.is_finite())
                        .unwrap_or(f64::NAN),
                })?;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if needs(v) {
                let len = self.nodes[v.0].value.len();
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &mut |buf| matmul_nt_acc(g, bv, buf, m, n, k));
                acc(*b, grads, &mut |buf| matmul_tn_acc(av, g, buf, m, k, n));
            }
            Op::MatMulTransB(a, b) => {
                // out[m×n] = a[m×k] · b[n×k]ᵀ
                let (m, k) = self.shape(*a);
                let n = cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &mut |buf| matmul_acc(g, bv, buf, m, n, k));
                acc(*b, grads, &mut |buf| matmul_tn_acc(g, av, buf, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, grads, &mut |buf| add_into(buf, g));
                acc(*b, grads, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &mut |buf| add_into(buf, g));
                acc(*b, grads, &mut |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o -= v)
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, grads, &mut |buf| add_into(buf, g));
                acc(*b, grads, &mut |buf| {
                    for row in g.chunks(cols) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, grads, &mut |buf| {
                    for ((o, gv), y) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                });
                acc(*b, grads, &mut |buf| {
                    for ((o, gv), x) in buf.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                });
            }
            Op::Affine(x, s) => acc(*x, grads, &mut |buf| {
                buf.iter_mut().zip(g).for_each(|(o, v)| *o += s * v)
            }),
            Op::Tanh(x) => acc(*x, grads, &mut |buf| {
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(x) => acc(*x, grads, &mut |buf| {
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::Exp(x) => acc(*x, grads, &mut |buf| {
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += gv * y;
                }
            }),
            Op::Gelu(x) => {
                let xs = self.value(*x);
                acc(*x, grads, &mut |buf| {
                    for ((o, gv), &xv) in buf.iter_mut().zip(g).zip(xs) {
                        *o += gv * gelu_grad(xv);
                    }
                })
            }
            Op::Ln { input, lo, hi } => {
                let xs = self.value(*input);
                acc(*input, grads, &mut |buf| {
                    for ((o, gv), &xv) in buf.iter_mut().zip(g).zip(xs) {
                        if xv >= *lo && xv <= *hi {
                            *o += gv / xv;
                        }
                    }
                })
            }
            Op::Softmax(x) => {
                let y = &node.value;
                acc(*x, grads, &mut |buf| {
                    for row in 0..rows {
                        let base = row * cols;
                        let dot: f64 = (0..cols).map(|j| g[base + j] * y[base + j]).sum();
                        for j in 0..cols {
                            buf[base + j] += y[base + j] * (g[base + j] - dot);
                        }
                    }
                })
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = cols;
                let gv = self.value(*gain);
                acc(*gain, grads, &mut |buf| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            buf[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, grads, &mut |buf| {
                    for gr in g.chunks(d) {
                        add_into(buf, gr);
                    }
                });
                acc(*input, grads, &mut |buf| {
                    for row in 0..rows {
                        let base = row * d;
                        let dh: Vec<f64> = (0..d).map(|j| g[base + j] * gv[j]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            (0..d).map(|j| dh[j] * xhat[base + j]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            buf[base + j] +=
                                inv_std[row] * (dh[j] - mean_dh - xhat[base + j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Transpose(x) => acc(*x, grads, &mut |buf| {
                // node is cols_in × rows_in
                for i in 0..rows {
                    for j in 0..cols {
                        buf[j * rows + i] += g[i * cols + j];
                    }
                }
            }),
            Op::SliceCols { input, start } => {
                let c_in = self.shape(*input).1;
                acc(*input, grads, &mut |buf| {
                    for row in 0..rows {
                        for j in 0..cols {
                            buf[row * c_in + start + j] += g[row * cols + j];
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p).1;
                    acc(*p, grads, &mut |buf| {
                        for row in 0..rows {
                            for j in 0..c {
                                buf[row * c + j] += g[row * cols + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(*p, grads, &mut |buf| {
                        add_into(buf, &g[offset..offset + len])
                    });
                    offset += len;
                }
            }
            Op::GatherRows(x, indices) => acc(*x, grads, &mut |buf| {
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        buf[i * cols + j] += g[k * cols + j];
                    }
                }
            }),
            Op::Pick(x, at) => {
                let c_in = self.shape(*x).1;
                acc(*x, grads, &mut |buf| {
                    for (k, &(i, j)) in at.iter().enumerate() {
                        buf[i * c_in + j] += g[k];
                    }
                })
            }
            Op::Sum(x) => acc(*x, grads, &mut |buf| {
                buf.iter_mut().for_each(|o| *o += g[0])
            }),
        }
    }
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    for (o, v) in buf.iter_mut().zip(g) {
        *o += v;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulTransB(..) => "matmul_t",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Affine(..) => "affine",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Gelu(_) => "gelu",
        Op::Exp(_) => "exp",
        Op::Ln { .. } => "ln",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Transpose(_) => "transpose",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(_) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::Pick(..) => "pick",
        Op::Sum(_) => "sum",
    }
}
