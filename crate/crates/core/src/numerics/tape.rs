use super::kernels::{
    dot, gelu, gelu_grad, log_sum_exp, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_row,
};
use super::{NumericsError, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, F),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    FillRows {
        x: Var,
        fill: Var,
        plan: Vec<Option<usize>>,
    },
    ConcatRows(Var, Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
        total_weight: F,
        probs: Vec<F>,
    },
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward computation for one backward sweep.
///
/// A tape is built per forward pass and dropped afterwards.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn expect_2d(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => Err(mismatch(op, t, &[0, 0])),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is collected.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_2d("matmul", self.value(a).shape())?;
        let (k2, n) = expect_2d("matmul", self.value(b).shape())?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = expect_2d("transpose", self.value(a).shape())?;
        let src = self.value(a).data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("add", self.value(a).shape(), self.value(b).shape()));
        }
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("mul", self.value(a).shape(), self.value(b).shape()));
        }
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    /// `x[n×d] + bias[d]`, broadcast over the leading axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = expect_2d("add_bias", self.value(x).shape())?;
        if self.value(bias).shape() != [d] {
            return Err(mismatch("add_bias", self.value(x).shape(), self.value(bias).shape()));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..n {
            for (o, &bv) in out[r * d..(r + 1) * d].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of length `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (n, d) = expect_2d("layer_norm", self.value(x).shape())?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(mismatch("layer_norm", self.value(x).shape(), self.value(gamma).shape()));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let inv_d = F::one() / F::lit(d as f64);
        let mut xhat = vec![F::zero(); n * d];
        let mut rstd = vec![F::zero(); n];
        let mut out = vec![F::zero(); n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Row gather from a `[V×d]` table; gradient scatter-adds into the selected rows.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = expect_2d("gather", self.value(table).shape())?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather",
                    index: id,
                    extent: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Output row `i` is `x[plan[i]]`, or the `fill` vector where `plan[i]` is `None`.
    pub fn fill_rows(&mut self, x: Var, fill: Var, plan: &[Option<usize>]) -> Result<Var> {
        let (n, d) = expect_2d("fill_rows", self.value(x).shape())?;
        if self.value(fill).shape() != [d] {
            return Err(mismatch("fill_rows", self.value(x).shape(), self.value(fill).shape()));
        }
        let src = self.value(x).data();
        let f = self.value(fill).data();
        let mut out = Vec::with_capacity(plan.len() * d);
        for entry in plan {
            match *entry {
                Some(j) if j >= n => {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "fill_rows",
                        index: j,
                        extent: n,
                    })
                }
                Some(j) => out.extend_from_slice(&src[j * d..(j + 1) * d]),
                None => out.extend_from_slice(f),
            }
        }
        let rg = self.rg(x) || self.rg(fill);
        Ok(self.push(
            Tensor::new(vec![plan.len(), d], out)?,
            Op::FillRows {
                x,
                fill,
                plan: plan.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, da) = expect_2d("concat_rows", self.value(a).shape())?;
        let (nb, db) = expect_2d("concat_rows", self.value(b).shape())?;
        if da != db {
            return Err(mismatch("concat_rows", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![na + nb, da], out)?, Op::ConcatRows(a, b), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = expect_2d("slice_rows", self.value(x).shape())?;
        if start + len > n {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                extent: n,
            });
        }
        let out = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![len, d], out)?, Op::SliceRows { x, start }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(NumericsError::NonFinite { op: "softmax" });
        }
        let c = t.cols();
        let mut out = t.data().to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_row(row);
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    /// Weighted mean of per-row negative log-likelihood.
    ///
    /// Rows with zero weight are never read, so their logits and targets cannot
    /// influence either the value or the gradient. All-zero weights give 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let (l, c) = expect_2d("cross_entropy", self.value(logits).shape())?;
        if targets.len() != l || weights.len() != l {
            return Err(mismatch("cross_entropy", &[l, c], &[targets.len(), weights.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumericsError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                extent: c,
            });
        }
        let total_weight: F = weights.iter().copied().filter(|w| *w > F::zero()).sum();
        let data = self.value(logits).data();
        let mut probs = vec![F::zero(); l * c];
        let mut acc = F::zero();
        for i in 0..l {
            if weights[i] <= F::zero() {
                continue;
            }
            let row = &data[i * c..(i + 1) * c];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "cross_entropy" });
            }
            let lse = log_sum_exp(row);
            acc += weights[i] * (lse - row[targets[i]]);
            let p = &mut probs[i * c..(i + 1) * c];
            p.copy_from_slice(row);
            softmax_row(p);
        }
        let loss = if total_weight > F::zero() {
            acc / total_weight
        } else {
            F::zero()
        };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                total_weight,
                probs,
            },
            rg,
        ))
    }

    /// Full (unmasked) multi-head self-attention over a fused `[n×3d]` projection
    /// laid out as `[q | k | v]`. Returns `[n×d]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let (n, d3) = expect_2d("attention", self.value(qkv).shape())?;
        if d3 % 3 != 0 || heads == 0 || (d3 / 3) % heads != 0 {
            return Err(mismatch("attention", self.value(qkv).shape(), &[heads]));
        }
        let d = d3 / 3;
        let dh = d / heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let src = self.value(qkv).data();
        let mut probs = vec![F::zero(); heads * n * n];
        let mut out = vec![F::zero(); n * d];
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let q = &src[i * d3 + qo..i * d3 + qo + dh];
                let prow = &mut p[i * n..(i + 1) * n];
                for (j, pv) in prow.iter_mut().enumerate() {
                    let k = &src[j * d3 + ko..j * d3 + ko + dh];
                    *pv = dot(q, k) * scale;
                }
                softmax_row(prow);
                let orow = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, &pv) in prow.iter().enumerate() {
                    let v = &src[j * d3 + vo..j * d3 + vo + dh];
                    for (o, &vv) in orow.iter_mut().zip(v) {
                        *o += pv * vv;
                    }
                }
            }
        }
        let rg = self.rg(qkv);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::Attention { qkv, heads, probs }, rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        let out_shape = self.value(output).shape();
        if self.value(output).len() != 1 {
            return Err(NumericsError::NotScalar(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![F::one()]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| {
                    g.filter(|_| n.requires_grad)
                        .map(|data| Tensor::new(n.value.shape().to_vec(), data).expect("grad shape"))
                })
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let len_of = |v: Var| self.nodes[v.0].value.len();
        // Lazily allocated gradient buffer of an input.
        fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut Vec<F> {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    matmul_nt_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    matmul_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let ga = slot(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        let gv = slot(grads, *v, g.len());
                        for (o, &x) in gv.iter_mut().zip(g) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let d = self.value(*bias).len();
                if self.rg(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o += v;
                    }
                }
                if self.rg(*bias) {
                    let gb = slot(grads, *bias, d);
                    for row in g.chunks(d) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o += v * *c;
                    }
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    let n = len_of(*x);
                    let gx = slot(grads, *x, n);
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Gelu(x) => {
                if self.rg(*x) {
                    let xv = self.value(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu_grad(xv[i]);
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
                let d = self.value(*gamma).len();
                let n = rstd.len();
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let gg = slot(grads, *gamma, d);
                    for r in 0..n {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let gb = slot(grads, *beta, d);
                    for row in g.chunks(d) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = slot(grads, *x, n * d);
                    let inv_d = F::one() / F::lit(d as f64);
                    let mut dxhat = vec![F::zero(); d];
                    for r in 0..n {
                        let mut mean_dx = F::zero();
                        let mut mean_dx_xhat = F::zero();
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gam[j];
                            mean_dx += dxhat[j];
                            mean_dx_xhat += dxhat[j] * xhat[r * d + j];
                        }
                        mean_dx *= inv_d;
                        mean_dx_xhat *= inv_d;
                        for j in 0..d {
                            gx[r * d + j] +=
                                rstd[r] * (dxhat[j] - mean_dx - xhat[r * d + j] * mean_dx_xhat);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.rg(*table) {
                    let d = self.value(*table).cols();
                    let gt = slot(grads, *table, len_of(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::FillRows { x, fill, plan } => {
                let d = self.value(*fill).len();
                if self.rg(*x) {
                    let gx = slot(grads, *x, len_of(*x));
                    for (r, entry) in plan.iter().enumerate() {
                        if let Some(j) = entry {
                            for c in 0..d {
                                gx[j * d + c] += g[r * d + c];
                            }
                        }
                    }
                }
                if self.rg(*fill) {
                    let gf = slot(grads, *fill, d);
                    for (r, entry) in plan.iter().enumerate() {
                        if entry.is_none() {
                            for c in 0..d {
                                gf[c] += g[r * d + c];
                            }
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = len_of(*a);
                if self.rg(*a) {
                    let ga = slot(grads, *a, na);
                    for (o, &v) in ga.iter_mut().zip(&g[..na]) {
                        *o += v;
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, g.len() - na);
                    for (o, &v) in gb.iter_mut().zip(&g[na..]) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if self.rg(*x) {
                    let d = self.value(*x).cols();
                    let gx = slot(grads, *x, len_of(*x));
                    for (o, &v) in gx[start * d..start * d + g.len()].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let p = node.value.data();
                    let c = node.value.cols();
                    let gx = slot(grads, *x, g.len());
                    for r in 0..g.len() / c.max(1) {
                        let pr = &p[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let s = dot(pr, gr);
                        for j in 0..c {
                            gx[r * c + j] += pr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                total_weight,
                probs,
            } => {
                if self.rg(*logits) && *total_weight > F::zero() {
                    let c = self.value(*logits).cols();
                    let gl = slot(grads, *logits, len_of(*logits));
                    for (i, &w) in weights.iter().enumerate() {
                        if w <= F::zero() {
                            continue;
                        }
                        let coef = g[0] * w / *total_weight;
                        for j in 0..c {
                            gl[i * c + j] += coef * probs[i * c + j];
                        }
                        gl[i * c + targets[i]] -= coef;
                    }
                }
            }
            Op::Attention { qkv, heads, probs } => {
                if self.rg(*qkv) {
                    let n = self.value(*qkv).rows();
                    let d3 = self.value(*qkv).cols();
                    let d = d3 / 3;
                    let dh = d / heads;
                    let scale = F::one() / F::lit(dh as f64).sqrt();
                    let src = self.value(*qkv).data();
                    let gq = slot(grads, *qkv, n * d3);
                    let mut dp = vec![F::zero(); n];
                    for h in 0..*heads {
                        let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                        let p = &probs[h * n * n..(h + 1) * n * n];
                        for i in 0..n {
                            let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                            let prow = &p[i * n..(i + 1) * n];
                            for j in 0..n {
                                let v = &src[j * d3 + vo..j * d3 + vo + dh];
                                dp[j] = dot(go, v);
                                // dV[j] += P[i,j] * dO[i]
                                let pv = prow[j];
                                for c in 0..dh {
                                    gq[j * d3 + vo + c] += pv * go[c];
                                }
                            }
                            let s = dot(prow, &dp);
                            for j in 0..n {
                                let ds = prow[j] * (dp[j] - s) * scale;
                                if ds == F::zero() {
                                    continue;
                                }
                                for c in 0..dh {
                                    let kv = src[j * d3 + ko + c];
                                    let qv = src[i * d3 + qo + c];
                                    gq[i * d3 + qo + c] += ds * kv;
                                    gq[j * d3 + ko + c] += ds * qv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
