use super::kernels::{gelu_grad, gelu_scalar, gemm};
use super::{as_matrix, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_t: bool },
    BatchMatMul { a: Var, b: Var, b_t: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddRowBias(Var, Var),
    Exp(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Transpose(Var),
    DiagSum(Var),
    Sum(Var),
    Reshape(Var),
    SplitHeads { x: Var, seq: usize, heads: usize },
    MergeHeads { x: Var, seq: usize, heads: usize },
    Interleave { slots: Vec<Option<Var>> },
    MeanGroups { x: Var, group: usize },
    SelectColumns { x: Var, cols: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Every op's inputs are earlier entries, so reverse index order is a valid
/// topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(av, "matmul").map_err(|_| mismatch("matmul", av, bv))?;
        let (k2, n) = as_matrix(bv, "matmul").map_err(|_| mismatch("matmul", av, bv))?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, b_t: false }, &[a, b]))
    }

    /// `a [m×k] · bᵀ` for `b [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(av, "matmul_nt").map_err(|_| mismatch("matmul_nt", av, bv))?;
        let (n, k2) = as_matrix(bv, "matmul_nt").map_err(|_| mismatch("matmul_nt", av, bv))?;
        if k != k2 {
            return Err(mismatch("matmul_nt", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), true, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, b_t: true }, &[a, b]))
    }

    fn bmm_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (batch, m, k, n) = match (av.shape(), bv.shape()) {
            ([ba, m, k], [bb, x, y]) if ba == bb => {
                let (k2, n) = if b_t { (*y, *x) } else { (*x, *y) };
                if *k != k2 {
                    return Err(mismatch("bmm", av, bv));
                }
                (*ba, *m, *k, n)
            }
            _ => return Err(mismatch("bmm", av, bv)),
        };
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                false,
                &bv.data()[i * k * n..(i + 1) * k * n],
                b_t,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, b_t }, &[a, b]))
    }

    /// Batched `a [B×m×k] · b [B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched `a [B×m×k] · bᵀ` for `b [B×n×k]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    /// `x · s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(mismatch("mul_scalar", self.value(x), sv));
        }
        let c = sv.data()[0];
        let v = self.map(x, |e| e * c);
        Ok(self.push(v, Op::MulScalar(x, s), &[x, s]))
    }

    /// Adds `bias [c]` to every row of `x [.. × c]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.len() != c {
            return Err(mismatch("add_row_bias", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (e, b) in row.iter_mut().zip(bv.data()) {
                *e += b;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, gelu_scalar);
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Row-wise normalization over the last extent (biased variance), then
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        for p in [gain, bias] {
            if self.value(p).len() != c {
                return Err(mismatch("layer_norm", xv, self.value(p)));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, e) in row.iter().enumerate() {
                let h = (e - mean) * inv;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Softmax over the last extent with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut s = 0.0;
            for e in row {
                let z = (e - m).exp();
                s += z;
                out.push(z);
            }
            for z in &mut out[start..] {
                *z /= s;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out).expect("shape preserved");
        self.push(v, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|e| e - lse));
        }
        let v = Tensor::new(xv.shape().to_vec(), out).expect("shape preserved");
        self.push(v, Op::LogSoftmaxRows(x), &[x])
    }

    /// Scales each row to unit Euclidean norm; a zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut norms = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for (r, row) in xv.data().chunks_exact(c).enumerate() {
            let n = row.iter().map(|e| e * e).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(TensorError::ZeroNorm {
                    op: "l2_normalize_rows",
                    row: r,
                });
            }
            norms.push(n);
            out.extend(row.iter().map(|e| e / n));
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(v, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose()?;
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    /// Trace of a square matrix, as a one-element tensor.
    pub fn diag_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = as_matrix(xv, "diag_sum")?;
        if m != n {
            return Err(mismatch("diag_sum", xv, xv));
        }
        let s = (0..n).map(|i| xv.data()[i * n + i]).sum();
        Ok(self.push(Tensor::scalar(s), Op::DiagSum(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// `[B·seq × H·dh]` → `[B·H × seq × dh]`.
    pub fn split_heads(&mut self, x: Var, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = as_matrix(xv, "split_heads")?;
        if seq == 0 || heads == 0 || rows % seq != 0 || d % heads != 0 {
            return Err(TensorError::Contract(format!(
                "split_heads: shape {:?} incompatible with seq {seq}, heads {heads}",
                xv.shape()
            )));
        }
        let (b, dh) = (rows / seq, d / heads);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for s in 0..seq {
                for h in 0..heads {
                    let from = (bi * seq + s) * d + h * dh;
                    let to = ((bi * heads + h) * seq + s) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let v = Tensor::new(vec![b * heads, seq, dh], out)?;
        Ok(self.push(v, Op::SplitHeads { x, seq, heads }, &[x]))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let (bh, seq, dh) = match xv.shape() {
            [a, b, c] if heads > 0 && a % heads == 0 => (*a, *b, *c),
            _ => {
                return Err(TensorError::Contract(format!(
                    "merge_heads: shape {:?} incompatible with heads {heads}",
                    xv.shape()
                )))
            }
        };
        let b = bh / heads;
        let d = heads * dh;
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for s in 0..seq {
                for h in 0..heads {
                    let to = (bi * seq + s) * d + h * dh;
                    let from = ((bi * heads + h) * seq + s) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let v = Tensor::new(vec![b * seq, d], out)?;
        Ok(self.push(v, Op::MergeHeads { x, seq, heads }, &[x]))
    }

    /// Builds a `[B·K × d]` token matrix whose row `b·K + s` is row `b` of
    /// slot `s`; `None` slots contribute zero rows.
    pub fn interleave_rows(&mut self, slots: &[Option<Var>]) -> Result<Var> {
        let k = slots.len();
        let first = slots
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| TensorError::Contract("interleave_rows: no present slot".into()))?;
        let (b, d) = as_matrix(self.value(*first), "interleave_rows")?;
        for v in slots.iter().flatten() {
            let t = self.value(*v);
            if t.shape() != [b, d] {
                return Err(mismatch("interleave_rows", self.value(*first), t));
            }
        }
        let mut out = vec![0.0; b * k * d];
        for (s, slot) in slots.iter().enumerate() {
            if let Some(v) = slot {
                let src = self.value(*v).data();
                for bi in 0..b {
                    let to = (bi * k + s) * d;
                    out[to..to + d].copy_from_slice(&src[bi * d..(bi + 1) * d]);
                }
            }
        }
        let inputs: Vec<Var> = slots.iter().flatten().copied().collect();
        let v = Tensor::new(vec![b * k, d], out)?;
        Ok(self.push(
            v,
            Op::Interleave {
                slots: slots.to_vec(),
            },
            &inputs,
        ))
    }

    /// Averages consecutive groups of `group` rows: `[B·group × d]` → `[B × d]`.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = as_matrix(xv, "mean_groups")?;
        if group == 0 || rows % group != 0 {
            return Err(TensorError::Contract(format!(
                "mean_groups: {rows} rows not divisible into groups of {group}"
            )));
        }
        let b = rows / group;
        let src = xv.data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let dst = &mut out[bi * d..(bi + 1) * d];
            for s in 0..group {
                let r = &src[(bi * group + s) * d..(bi * group + s + 1) * d];
                for (o, e) in dst.iter_mut().zip(r) {
                    *o += e;
                }
            }
            for o in dst.iter_mut() {
                *o /= group as f64;
            }
        }
        let v = Tensor::new(vec![b, d], out)?;
        Ok(self.push(v, Op::MeanGroups { x, group }, &[x]))
    }

    pub fn select_columns(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(TensorError::Contract(format!(
                "select_columns: columns {cols:?} out of range for width {c}"
            )));
        }
        let mut out = Vec::with_capacity(xv.rows() * cols.len());
        for row in xv.data().chunks_exact(c) {
            out.extend(cols.iter().map(|&j| row[j]));
        }
        let v = Tensor::new(vec![xv.rows(), cols.len()], out)?;
        Ok(self.push(
            v,
            Op::SelectColumns {
                x,
                cols: cols.to_vec(),
            },
            &[x],
        ))
    }
}

/// Gradients of a scalar with respect to every tape entry that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape).expect("value shapes are valid"),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], tape: &Tape, v: Var) -> Option<&'a mut Vec<f64>> {
    if !tape.nodes[v.0].needs_grad {
        return None;
    }
    let n = tape.nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

/// Reverse sweep from a one-element `loss`.
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients> {
    let lv = tape.value(loss);
    if lv.len() != 1 {
        return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
    grads[loss.0] = Some(vec![1.0]);
    for i in (0..=loss.0).rev() {
        let node = &tape.nodes[i];
        if !node.needs_grad {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        propagate(tape, &mut grads, node, &g);
        grads[i] = Some(g);
    }
    Ok(Gradients {
        grads,
        shapes: tape.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
    })
}

fn propagate(tape: &Tape, grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| tape.value(v);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, b_t } => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = node.value.shape()[1];
            if let Some(da) = slot(grads, tape, *a) {
                // dA = g · op(b)ᵀ
                gemm(m, n, k, g, false, val(*b).data(), !*b_t, da, true);
            }
            if let Some(db) = slot(grads, tape, *b) {
                if *b_t {
                    gemm(n, m, k, g, true, val(*a).data(), false, db, true);
                } else {
                    gemm(k, m, n, val(*a).data(), true, g, false, db, true);
                }
            }
        }
        Op::BatchMatMul { a, b, b_t } => {
            let s = val(*a).shape();
            let (batch, m, k) = (s[0], s[1], s[2]);
            let n = node.value.shape()[2];
            if let Some(da) = slot(grads, tape, *a) {
                let bd = val(*b).data();
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bd[i * k * n..(i + 1) * k * n],
                        !*b_t,
                        &mut da[i * m * k..(i + 1) * m * k],
                        true,
                    );
                }
            }
            if let Some(db) = slot(grads, tape, *b) {
                let ad = val(*a).data();
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &ad[i * m * k..(i + 1) * m * k];
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if *b_t {
                        gemm(n, m, k, gi, true, ai, false, dbi, true);
                    } else {
                        gemm(k, m, n, ai, true, gi, false, dbi, true);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(d) = slot(grads, tape, v) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(grads, tape, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = slot(grads, tape, *b) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            if let Some(d) = slot(grads, tape, *a) {
                let bv = val(*b).data();
                for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                    *d += g * y;
                }
            }
            if let Some(d) = slot(grads, tape, *b) {
                let av = val(*a).data();
                for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                    *d += g * x;
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(d) = slot(grads, tape, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            }
        }
        Op::MulScalar(x, s) => {
            let c = val(*s).data()[0];
            if let Some(d) = slot(grads, tape, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            }
            if let Some(d) = slot(grads, tape, *s) {
                let xv = val(*x).data();
                d[0] += g.iter().zip(xv).map(|(g, x)| g * x).sum::<f64>();
            }
        }
        Op::AddRowBias(x, b) => {
            if let Some(d) = slot(grads, tape, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = slot(grads, tape, *b) {
                let c = d.len();
                for row in g.chunks_exact(c) {
                    d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Exp(a) => {
            if let Some(d) = slot(grads, tape, *a) {
                let y = node.value.data();
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y;
                }
            }
        }
        Op::Gelu(a) => {
            if let Some(d) = slot(grads, tape, *a) {
                let x = val(*a).data();
                for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                    *d += g * gelu_grad(*x);
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gv = val(*gain).data();
            let c = gv.len();
            if let Some(d) = slot(grads, tape, *gain) {
                for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        d[j] += grow[j] * hrow[j];
                    }
                }
            }
            if let Some(d) = slot(grads, tape, *bias) {
                for grow in g.chunks_exact(c) {
                    d.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                }
            }
            if let Some(d) = slot(grads, tape, *x) {
                let cf = c as f64;
                for (r, (grow, hrow)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let dh = grow[j] * gv[j];
                        s1 += dh;
                        s2 += dh * hrow[j];
                    }
                    let inv = inv_std[r];
                    let drow = &mut d[r * c..(r + 1) * c];
                    for j in 0..c {
                        let dh = grow[j] * gv[j];
                        drow[j] += inv / cf * (cf * dh - s1 - hrow[j] * s2);
                    }
                }
            }
        }
        Op::SoftmaxRows(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                let c = node.value.cols();
                let y = node.value.data();
                for ((drow, grow), yrow) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(y.chunks_exact(c))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for j in 0..c {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmaxRows(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                let c = node.value.cols();
                let y = node.value.data();
                for ((drow, grow), yrow) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(y.chunks_exact(c))
                {
                    let gs: f64 = grow.iter().sum();
                    for j in 0..c {
                        drow[j] += grow[j] - yrow[j].exp() * gs;
                    }
                }
            }
        }
        Op::L2NormalizeRows { x, norms } => {
            if let Some(d) = slot(grads, tape, *x) {
                let c = node.value.cols();
                let y = node.value.data();
                for (r, ((drow, grow), yrow)) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(y.chunks_exact(c))
                    .enumerate()
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for j in 0..c {
                        drow[j] += (grow[j] - yrow[j] * dot) / norms[r];
                    }
                }
            }
        }
        Op::Transpose(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                let (m, n) = (val(*x).shape()[0], val(*x).shape()[1]);
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::DiagSum(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                let n = val(*x).shape()[0];
                for i in 0..n {
                    d[i * n + i] += g[0];
                }
            }
        }
        Op::Sum(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Reshape(x) => {
            if let Some(d) = slot(grads, tape, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::SplitHeads { x, seq, heads } => {
            if let Some(d) = slot(grads, tape, *x) {
                let dh = node.value.shape()[2];
                let dm = heads * dh;
                let b = val(*x).shape()[0] / seq;
                for bi in 0..b {
                    for s in 0..*seq {
                        for h in 0..*heads {
                            let to = (bi * seq + s) * dm + h * dh;
                            let from = ((bi * heads + h) * seq + s) * dh;
                            for j in 0..dh {
                                d[to + j] += g[from + j];
                            }
                        }
                    }
                }
            }
        }
        Op::MergeHeads { x, seq, heads } => {
            if let Some(d) = slot(grads, tape, *x) {
                let dh = val(*x).shape()[2];
                let dm = heads * dh;
                let b = val(*x).shape()[0] / heads;
                for bi in 0..b {
                    for s in 0..*seq {
                        for h in 0..*heads {
                            let from = (bi * seq + s) * dm + h * dh;
                            let to = ((bi * heads + h) * seq + s) * dh;
                            for j in 0..dh {
                                d[to + j] += g[from + j];
                            }
                        }
                    }
                }
            }
        }
        Op::Interleave { slots } => {
            let k = slots.len();
            let dcols = node.value.cols();
            for (s, v) in slots.iter().enumerate() {
                let Some(v) = v else { continue };
                if let Some(d) = slot(grads, tape, *v) {
                    let b = d.len() / dcols;
                    for bi in 0..b {
                        let from = (bi * k + s) * dcols;
                        for j in 0..dcols {
                            d[bi * dcols + j] += g[from + j];
                        }
                    }
                }
            }
        }
        Op::MeanGroups { x, group } => {
            if let Some(d) = slot(grads, tape, *x) {
                let c = node.value.cols();
                let inv = 1.0 / *group as f64;
                for (r, drow) in d.chunks_exact_mut(c).enumerate() {
                    let grow = &g[(r / group) * c..(r / group + 1) * c];
                    for j in 0..c {
                        drow[j] += grow[j] * inv;
                    }
                }
            }
        }
        Op::SelectColumns { x, cols } => {
            if let Some(d) = slot(grads, tape, *x) {
                let c = val(*x).cols();
                let w = cols.len();
                for (drow, grow) in d.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                    for (j, &col) in cols.iter().enumerate() {
                        drow[col] += grow[j];
                    }
                }
            }
        }
    }
}
