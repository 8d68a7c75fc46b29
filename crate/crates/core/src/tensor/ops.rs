use super::kernels::{dot, gelu, gelu_grad, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{CustomBackward, Graph, Node, Op, Tensor, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Applies a `[k,n]` weight to the last axis of any tensor whose last
    /// dimension is `k`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().ok_or_else(|| dim_err("linear", &shape, self.shape(w)))?;
        let rows = shape.iter().product::<usize>() / k.max(1);
        let flat = self.reshape(x, &[rows, k])?;
        let y = self.matmul(flat, w)?;
        let n = self.shape(w)[1];
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = n;
        self.reshape(y, &out_shape)
    }

    /// Batched product `[B,m,k] x [B,k,n]`, or `[B,m,k] x [B,n,k]^T` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err("batch_matmul", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(dim_err("batch_matmul", &sa, &sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let a_s = &ad[bi * m * k..(bi + 1) * m * k];
            let b_s = &bd[bi * k * n..(bi + 1) * k * n];
            let c_s = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                matmul_nt_acc(a_s, b_s, c_s, m, k, n);
            } else {
                matmul_acc(a_s, b_s, c_s, m, k, n);
            }
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(dim_err("transpose", &s, &[2]));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor {
            shape: self.shape(a).to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of a tensor whose last axis is `n`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(dim_err("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(value, Op::AddRowBias { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data().iter().map(|v| v * s).collect(),
        };
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(dim_err("reshape", self.shape(a), shape));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: self.value(a).data().to_vec(),
        };
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// `[A,B,C,D] -> [A,C,B,D]`; used to split and merge attention heads.
    pub fn swap_axes12(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(dim_err("swap_axes12", &s, &[4]));
        }
        let data = swap12(self.value(a).data(), [s[0], s[1], s[2], s[3]]);
        let value = Tensor::new(vec![s[0], s[2], s[1], s[3]], data)?;
        Ok(self.push(value, Op::SwapAxes12(a), &[a]))
    }

    /// Softmax over the last axis. Masked entries (`false`) are exactly zero
    /// in the output; each row needs at least one unmasked entry.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let src = self.value(x);
        if let Some(m) = mask {
            if m.len() != src.numel() {
                return Err(dim_err("softmax_rows", src.shape(), &[m.len()]));
            }
        }
        let data = softmax_data(src.data(), src.last_dim(), mask)?;
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of shape `[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / n;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: out,
        };
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(value, op, &[x, gamma, beta]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.value(x).data().iter().map(|&v| gelu(v)).collect(),
        };
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Row lookup into a `[V,d]` table; output is `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(dim_err("embedding", &s, &[2]));
        }
        let (vocab, d) = (s[0], s[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocab {
                    id,
                    vocab_size: vocab,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op, &[table]))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(Error::Config("concat of nothing".into()))?);
        let lead = first[..first.len() - 1].to_vec();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(dim_err("concat_last", self.shape(parts[0]), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(dim_err("mean_axis", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = s;
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Mean { x, axis }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Selects rows (over the last axis) of a tensor viewed as `[N,d]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let d = src.last_dim();
        let n = src.numel() / d.max(1);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(dim_err("gather_rows", src.shape(), &[r]));
            }
            out.extend_from_slice(src.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        let op = Op::GatherRows {
            x,
            rows: rows.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Mean over rows of `-ln(max(p[label], eps))` for a `[B,C]` probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], eps: f64) -> Result<Var> {
        let s = self.shape(probs).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err("cross_entropy", &s, &[labels.len()]));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(bad.to_string()));
        }
        let p = self.value(probs).data();
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[i * c + l].max(eps).ln())
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
            eps,
        };
        Ok(self.push(value, op, &[probs]))
    }

    /// Node with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        let op = Op::Custom {
            inputs: inputs.to_vec(),
            backward,
        };
        self.push(value, op, inputs)
    }
}

pub(crate) fn softmax_data(src: &[f64], n: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; src.len()];
    for (r, (row, orow)) in src.chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY && !(0..n).any(keep) {
            return Err(Error::DegenerateRow {
                op: "softmax_rows",
                row: r,
            });
        }
        let mut sum = 0.0;
        for j in 0..n {
            if keep(j) {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        orow.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn swap12(src: &[f64], [a, b, c, d]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * d;
                let to = ((i * c + k) * b + j) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}

fn accumulate(adjoints: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let numel = nodes[v.0].value.numel();
    let buf = adjoints[v.0].get_or_insert_with(|| vec![0.0; numel]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Pushes the adjoint of node `idx` into the adjoints of its inputs.
pub(super) fn propagate(nodes: &[Node], idx: usize, adj: &[f64], adjoints: &mut [Option<Vec<f64>>]) {
    let node = &nodes[idx];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            accumulate(adjoints, nodes, *a, |g| {
                matmul_nt_acc(adj, val(*b).data(), g, m, n, k)
            });
            accumulate(adjoints, nodes, *b, |g| {
                matmul_tn_acc(val(*a).data(), adj, g, m, k, n)
            });
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let sa = val(*a).shape();
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.value.shape()[2];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            accumulate(adjoints, nodes, *a, |g| {
                for bi in 0..batch {
                    let dc = &adj[bi * m * n..(bi + 1) * m * n];
                    let b_s = &bd[bi * k * n..(bi + 1) * k * n];
                    let g_s = &mut g[bi * m * k..(bi + 1) * m * k];
                    if *trans_b {
                        // dA = dC B, B is [n,k]
                        matmul_acc(dc, b_s, g_s, m, n, k);
                    } else {
                        matmul_nt_acc(dc, b_s, g_s, m, n, k);
                    }
                }
            });
            accumulate(adjoints, nodes, *b, |g| {
                for bi in 0..batch {
                    let dc = &adj[bi * m * n..(bi + 1) * m * n];
                    let a_s = &ad[bi * m * k..(bi + 1) * m * k];
                    let g_s = &mut g[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        // dB = dC^T A, shape [n,k]
                        matmul_tn_acc(dc, a_s, g_s, m, n, k);
                    } else {
                        matmul_tn_acc(a_s, dc, g_s, m, k, n);
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let s = val(*a).shape();
            let (m, n) = (s[0], s[1]);
            accumulate(adjoints, nodes, *a, |g| {
                for i in 0..m {
                    for j in 0..n {
                        g[i * n + j] += adj[j * m + i];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(adjoints, nodes, *a, |g| add_into(g, adj));
            accumulate(adjoints, nodes, *b, |g| add_into(g, adj));
        }
        Op::Sub(a, b) => {
            accumulate(adjoints, nodes, *a, |g| add_into(g, adj));
            accumulate(adjoints, nodes, *b, |g| {
                g.iter_mut().zip(adj).for_each(|(d, s)| *d -= s)
            });
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            accumulate(adjoints, nodes, *a, |g| {
                for ((d, s), y) in g.iter_mut().zip(adj).zip(bd) {
                    *d += s * y;
                }
            });
            accumulate(adjoints, nodes, *b, |g| {
                for ((d, s), x) in g.iter_mut().zip(adj).zip(ad) {
                    *d += s * x;
                }
            });
        }
        Op::AddRowBias { x, bias } => {
            accumulate(adjoints, nodes, *x, |g| add_into(g, adj));
            let n = val(*bias).numel();
            accumulate(adjoints, nodes, *bias, |g| {
                for row in adj.chunks(n) {
                    add_into(g, row);
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(adjoints, nodes, *a, |g| {
                g.iter_mut().zip(adj).for_each(|(d, v)| *d += v * s)
            });
        }
        Op::Reshape(a) => accumulate(adjoints, nodes, *a, |g| add_into(g, adj)),
        Op::SwapAxes12(a) => {
            let s = node.value.shape();
            let back = swap12(adj, [s[0], s[1], s[2], s[3]]);
            accumulate(adjoints, nodes, *a, |g| add_into(g, &back));
        }
        Op::SoftmaxRows(a) => {
            let y = node.value.data();
            let n = node.value.last_dim();
            accumulate(adjoints, nodes, *a, |g| {
                for ((yr, dr), gr) in y.chunks(n).zip(adj.chunks(n)).zip(g.chunks_mut(n)) {
                    let inner = dot(yr, dr);
                    for j in 0..n {
                        gr[j] += yr[j] * (dr[j] - inner);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let n = node.value.last_dim();
            let gd = val(*gamma).data();
            accumulate(adjoints, nodes, *x, |g| {
                let mut dxhat = vec![0.0; n];
                for (r, gr) in g.chunks_mut(n).enumerate() {
                    let dy = &adj[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    for j in 0..n {
                        dxhat[j] = dy[j] * gd[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dot(&dxhat, xh) / n as f64;
                    for j in 0..n {
                        gr[j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                    }
                }
            });
            accumulate(adjoints, nodes, *gamma, |g| {
                for (dy, xh) in adj.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        g[j] += dy[j] * xh[j];
                    }
                }
            });
            accumulate(adjoints, nodes, *beta, |g| {
                for dy in adj.chunks(n) {
                    add_into(g, dy);
                }
            });
        }
        Op::Gelu(a) => {
            let xd = val(*a).data();
            accumulate(adjoints, nodes, *a, |g| {
                for ((d, s), x) in g.iter_mut().zip(adj).zip(xd) {
                    *d += s * gelu_grad(*x);
                }
            });
        }
        Op::Embedding { table, ids } => {
            let d = val(*table).last_dim();
            accumulate(adjoints, nodes, *table, |g| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut g[id * d..(id + 1) * d], &adj[r * d..(r + 1) * d]);
                }
            });
        }
        Op::ConcatLast(parts) => {
            let total = node.value.last_dim();
            let rows = node.value.numel() / total.max(1);
            let mut offset = 0;
            for &p in parts {
                let w = val(p).last_dim();
                accumulate(adjoints, nodes, p, |g| {
                    for r in 0..rows {
                        add_into(
                            &mut g[r * w..(r + 1) * w],
                            &adj[r * total + offset..r * total + offset + w],
                        );
                    }
                });
                offset += w;
            }
        }
        Op::Mean { x, axis } => {
            let (outer, len, inner) = axis_split(val(*x).shape(), *axis);
            let scale = 1.0 / len as f64;
            accumulate(adjoints, nodes, *x, |g| {
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            g[base + i] += adj[o * inner + i] * scale;
                        }
                    }
                }
            });
        }
        Op::SumAll(a) => {
            let s = adj[0];
            accumulate(adjoints, nodes, *a, |g| g.iter_mut().for_each(|d| *d += s));
        }
        Op::GatherRows { x, rows } => {
            let d = node.value.last_dim();
            accumulate(adjoints, nodes, *x, |g| {
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut g[r * d..(r + 1) * d], &adj[i * d..(i + 1) * d]);
                }
            });
        }
        Op::CrossEntropy { probs, labels, eps } => {
            let p = val(*probs).data();
            let c = val(*probs).last_dim();
            let scale = adj[0] / labels.len() as f64;
            accumulate(adjoints, nodes, *probs, |g| {
                for (i, &l) in labels.iter().enumerate() {
                    let pv = p[i * c + l];
                    // the clamp has zero derivative below eps
                    if pv > *eps {
                        g[i * c + l] -= scale / pv;
                    }
                }
            });
        }
        Op::Custom { inputs, backward } => {
            let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
            let grads = backward(adj, &values);
            for (&v, grad) in inputs.iter().zip(grads) {
                if let Some(grad) = grad {
                    accumulate(adjoints, nodes, v, |g| add_into(g, &grad));
                }
            }
        }
    }
}
