//! Eager reverse-mode differentiation over a Wengert list.
//!
//! Each operation computes its value immediately and appends a node to the
//! tape. Node indices are a topological order by construction, so
//! [`Tape::backward`] simply walks the list in reverse. The tape is rebuilt
//! for every step; nothing is shared between steps except the parameters.

use crate::dropout::DropoutMask;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    GatherRows { x: Var, idx: Vec<usize> },
    Dropout { x: Var, mult: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    LogSumExpSelect { x: Var, sel: Vec<Vec<usize>> },
    PickPerRow { x: Var, cols: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::Dropout { .. } => "dropout",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::LogSumExpSelect { .. } => "logsumexp_select",
            Op::PickPerRow { .. } => "pick_per_row",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Name of the primitive that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, data).expect("shape computed by the op")
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("constant #{}", self.nodes.len())));
        }
        let mut value = value;
        value.clear_grad();
        Ok(self.push(value, Op::Constant))
    }

    /// Registers a parameter. Repeated calls for the same id return the same
    /// node, so every use of a parameter accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.params.get(id.0) {
            return Ok(*v);
        }
        let t = store.get(id);
        if !t.is_finite() {
            return Err(Error::NonFinite(store.name(id).to_string()));
        }
        let mut value = t.clone();
        value.clear_grad();
        let v = self.push(value, Op::Param(id));
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = tensor::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Self::mat(m, n, out), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (n, k2) = self.shape2(b);
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let out = tensor::matmul_t(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Self::mat(m, n, out), Op::MatMulT(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let ta = self.value(a);
        let data = ta.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op))
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

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape2(a);
        let (r, n2) = self.shape2(row);
        if r != 1 || n != n2 {
            return Err(Error::shape("add_row", format!("[{m},{n}] + [{r},{n2}]")));
        }
        let b = self.value(row).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, &bv) in chunk.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(Self::mat(m, n, out), Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        if !s.is_finite() {
            return Err(Error::NonFinite("scale factor".into()));
        }
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect())?;
        Ok(self.push(value, Op::Scale(a, s)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())?;
        Ok(self.push(value, op))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu(a), |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// `ln(1 + eˣ)`, stable for large |x|.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Row-wise softmax. Entries where `allowed` is false get probability
    /// exactly 0; a row with no allowed entry is an error.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if let Some(mask) = allowed {
            if mask.len() != m * n {
                return Err(Error::shape("softmax", format!("mask of {} for [{m},{n}]", mask.len())));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let ok = |c: usize| allowed.is_none_or(|mk| mk[r * n + c]);
            let row = &x[r * n..(r + 1) * n];
            let max = (0..n).filter(|&c| ok(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::shape("softmax", format!("row {r} is fully masked")));
            }
            let orow = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for c in 0..n {
                if ok(c) {
                    orow[c] = (row[c] - max).exp();
                    total += orow[c];
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        Ok(self.push(Self::mat(m, n, out), Op::Softmax(a)))
    }

    /// Per-row layer normalisation with learned `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape2(a);
        for (what, v) in [("gain", gain), ("bias", bias)] {
            let (r, c) = self.shape2(v);
            if r != 1 || c != n {
                return Err(Error::shape("layer_norm", format!("{what} [{r},{c}] for width {n}")));
            }
        }
        let x = self.value(a).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for c in 0..n {
                let h = (row[c] - mean) * s;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(Self::mat(m, n, out), Op::LayerNorm { x: a, gain, bias, xhat, rstd }))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {m}")));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(Self::mat(idx.len(), n, out), Op::GatherRows { x: a, idx: idx.to_vec() }))
    }

    /// Multiplies by the mask's keep pattern. An identity mask (rate 0)
    /// returns `a` unchanged without recording a node.
    pub fn dropout(&mut self, a: Var, mask: &DropoutMask) -> Result<Var> {
        let t = self.value(a);
        if mask.shape.as_slice() != t.shape() {
            return Err(Error::shape("dropout", format!("mask {:?} for {:?}", mask.shape, t.shape())));
        }
        if mask.is_identity() {
            return Ok(a);
        }
        let mult = mask.multipliers();
        let data = t.data().iter().zip(&mult).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x: a, mult }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let n = self.shape2(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape2(p);
            if c != n {
                return Err(Error::shape("concat_rows", format!("width {c} vs {n}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Self::mat(rows, n, out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if len == 0 || start + len > m {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Self::mat(len, n, out), Op::SliceRows { x: a, start }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    /// For each row `r`, `log Σ_{c ∈ sel[r]} exp(a[r, c])` as an `[m, 1]` column.
    /// Column indices may repeat; each occurrence contributes one term.
    pub fn logsumexp_select(&mut self, a: Var, sel: Vec<Vec<usize>>) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if sel.len() != m {
            return Err(Error::shape("logsumexp_select", format!("{} selections for {m} rows", sel.len())));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(m);
        for (r, cols) in sel.iter().enumerate() {
            if cols.is_empty() {
                return Err(Error::shape("logsumexp_select", format!("row {r} selects nothing")));
            }
            if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
                return Err(Error::shape("logsumexp_select", format!("column {bad} of {n}")));
            }
            let row = t.row(r);
            out.push(tensor::log_sum_exp(cols.iter().map(|&c| row[c])));
        }
        Ok(self.push(Self::mat(m, 1, out), Op::LogSumExpSelect { x: a, sel }))
    }

    /// `out[r] = a[r, cols[r]]` as an `[m, 1]` column.
    pub fn pick_per_row(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if cols.len() != m || cols.iter().any(|&c| c >= n) {
            return Err(Error::shape("pick_per_row", format!("{} picks for [{m},{n}]", cols.len())));
        }
        let t = self.value(a);
        let out = cols.iter().enumerate().map(|(r, &c)| t.at(r, c)).collect();
        Ok(self.push(Self::mat(m, 1, out), Op::PickPerRow { x: a, cols }))
    }

    /// Propagates d`loss` back through the tape and writes parameter
    /// gradients into `store`. Every parameter in the store gets a gradient
    /// slot; parameters the loss does not touch receive zeros.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(loss.0));
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        store.zero_grads();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let dims = |v: Var| self.shape2(v);
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let slot = store.get_mut(*id).grad_mut();
                for (s, d) in slot.iter_mut().zip(g) {
                    *s += d;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).1;
                // dA = G Bᵀ, dB = Aᵀ G
                let da = tensor::matmul_t(g, val(*b), m, n, k);
                let db = tensor::t_matmul(val(*a), g, m, k, n);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::MatMulT(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).0;
                // out = A Bᵀ: dA = G B, dB = Gᵀ A
                let da = tensor::matmul(g, val(*b), m, n, k);
                let db = tensor::t_matmul(g, val(*a), m, n, k);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(grads, *a, g.iter().zip(vb).map(|(d, y)| d * y).collect());
                acc(grads, *b, g.iter().zip(va).map(|(d, x)| d * x).collect());
            }
            Op::AddRow(a, row) => {
                let n = dims(*a).1;
                let mut dr = vec![0.0; n];
                for chunk in g.chunks(n) {
                    for (d, v) in dr.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc(grads, *a, g.to_vec());
                acc(grads, *row, dr);
            }
            Op::Scale(a, s) => acc(grads, *a, g.iter().map(|d| d * s).collect()),
            Op::Relu(a) => {
                let x = val(*a);
                acc(grads, *a, g.iter().zip(x).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect());
            }
            Op::Gelu(a) => {
                let x = val(*a);
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(d, &x)| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(grads, *a, dx);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(grads, *a, g.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(grads, *a, g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect());
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(grads, *a, g.iter().zip(x).map(|(d, &x)| d * sigmoid(x)).collect());
            }
            Op::Softmax(a) => {
                let (m, n) = dims(*a);
                let y = node.value.data();
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let s = tensor::dot(yr, gr);
                    for c in 0..n {
                        dx[r * n + c] = yr[c] * (gr[c] - s);
                    }
                }
                acc(grads, *a, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = dims(*x);
                let gv = val(*gain);
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..n {
                        let dh = gr[c] * gv[c];
                        mean_d += dh;
                        mean_dh += dh * hr[c];
                        dg[c] += gr[c] * hr[c];
                        db[c] += gr[c];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    for c in 0..n {
                        let dh = gr[c] * gv[c];
                        dx[r * n + c] = rstd[r] * (dh - mean_d - hr[c] * mean_dh);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, dg);
                acc(grads, *bias, db);
            }
            Op::GatherRows { x, idx } => {
                let (m, n) = dims(*x);
                let mut dx = vec![0.0; m * n];
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        dx[i * n + c] += g[k * n + c];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Dropout { x, mult } => {
                acc(grads, *x, g.iter().zip(mult).map(|(d, m)| d * m).collect());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    acc(grads, p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let (m, n) = dims(*x);
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + g.len()].copy_from_slice(g);
                acc(grads, *x, dx);
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.numel();
                acc(grads, *a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.numel();
                acc(grads, *a, vec![g[0] / len as f64; len]);
            }
            Op::LogSumExpSelect { x, sel } => {
                let (m, n) = dims(*x);
                let xv = val(*x);
                let out = node.value.data();
                let mut dx = vec![0.0; m * n];
                for (r, cols) in sel.iter().enumerate() {
                    for &c in cols {
                        dx[r * n + c] += g[r] * (xv[r * n + c] - out[r]).exp();
                    }
                }
                acc(grads, *x, dx);
            }
            Op::PickPerRow { x, cols } => {
                let (m, n) = dims(*x);
                let mut dx = vec![0.0; m * n];
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
                acc(grads, *x, dx);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
