//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read directly from a borrowed [`ParamStore`]; everything else is owned
//! by the tape. Calling [`Graph::backward`] walks the tape in reverse and
//! returns the gradient of a scalar node with respect to every parameter
//! that took part in the computation.
//!
//! Operations are coarse (layer norm, masked multi-head attention, row-wise
//! cosine) so the tape stays short and each backward rule can be checked
//! against finite differences in isolation.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, Mat};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        len: usize,
        probs: Vec<f64>,
    },
    Rows(Var, Vec<usize>),
    Concat(Vec<Var>),
    BroadcastRow(Var),
    ReplaceRows {
        base: Var,
        row: Var,
        flags: Vec<bool>,
    },
    MeanRows(Var, Vec<Vec<usize>>),
    RowCosine(Var, Var),
    RowSqDist(Var, Var),
    NegLogSigmoid(Var),
    Mean(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Row count of a parameter tensor without recording it on the tape.
    pub fn value_rows(&self, id: ParamId) -> usize {
        self.store.value(id).rows()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m[(0, 0)]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Mat::zeros(0, 0), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width mismatch");
        let mut out = self.value(a).clone();
        let rv = r.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    /// Multiplies row `r` of `a` by `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(factors.len(), out.rows(), "scale_rows length mismatch");
        for (r, &f) in factors.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x *= f);
        }
        self.push(out, Op::ScaleRows(a, factors))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned gain and bias (`1 x m`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let mut xhat = Mat::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Mat::zeros(n, m);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (j, v) in row.iter().enumerate() {
                xh[j] = (v - mean) * inv;
            }
            let o = out.row_mut(r);
            for j in 0..m {
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Masked multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `(batch * len) x d`, sample-major. Keys whose
    /// `key_mask` entry is false receive `-inf` logits. Every sample must
    /// have at least one unmasked key.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[bool],
        batch: usize,
        len: usize,
        heads: usize,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(qv.rows(), batch * len, "attention rows != batch * len");
        assert_eq!(key_mask.len(), batch * len, "attention mask length");
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(batch * len, d);
        let mut probs = vec![0.0; batch * heads * len * len];
        let mut logits = vec![0.0; len];
        for b in 0..batch {
            let mask = &key_mask[b * len..(b + 1) * len];
            assert!(mask.iter().any(|&m| m), "attention over an all-padding sequence");
            for h in 0..heads {
                let cs = h * dh..(h + 1) * dh;
                for i in 0..len {
                    let qi = &qv.row(b * len + i)[cs.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        logits[j] = if mask[j] {
                            let s = dot(qi, &kv.row(b * len + j)[cs.clone()]) * scale;
                            max = max.max(s);
                            s
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    let p = &mut probs[((b * heads + h) * len + i) * len..][..len];
                    let mut z = 0.0;
                    for j in 0..len {
                        p[j] = if mask[j] { (logits[j] - max).exp() } else { 0.0 };
                        z += p[j];
                    }
                    let o = &mut out.row_mut(b * len + i)[cs.clone()];
                    for j in 0..len {
                        p[j] /= z;
                        if p[j] != 0.0 {
                            let vj = &vv.row(b * len + j)[cs.clone()];
                            for (oc, vc) in o.iter_mut().zip(vj) {
                                *oc += p[j] * vc;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                len,
                probs,
            },
        )
    }

    /// Attention probabilities of the most recent [`Graph::attention`] node
    /// `att`, laid out `[batch][head][query][key]`.
    pub fn attention_probs(&self, att: Var) -> Option<&[f64]> {
        match &self.nodes[att.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Row gather: `out[i] = a[indices[i]]`.
    pub fn rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let out = self.value(a).select_rows(&indices);
        self.push(out, Op::Rows(a, indices))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Mat::zeros(n, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), n, "concat height mismatch");
            for r in 0..n {
                out.row_mut(r)[off..off + w].copy_from_slice(pv.row(r));
            }
            off += w;
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_row(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        let mut out = Mat::zeros(n, r.cols());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(r.row(0));
        }
        self.push(out, Op::BroadcastRow(row))
    }

    /// Rows of `base` with `flags[r] == true` are replaced by the `1 x m` `row`.
    pub fn replace_rows(&mut self, base: Var, row: Var, flags: Vec<bool>) -> Var {
        let mut out = self.value(base).clone();
        assert_eq!(flags.len(), out.rows());
        let r = self.value(row).row(0).to_vec();
        for (i, &f) in flags.iter().enumerate() {
            if f {
                out.row_mut(i).copy_from_slice(&r);
            }
        }
        self.push(out, Op::ReplaceRows { base, row, flags })
    }

    /// `out[i]` = arithmetic mean of the rows of `a` listed in `groups[i]`.
    pub fn mean_rows(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(groups.len(), av.cols());
        for (i, g) in groups.iter().enumerate() {
            assert!(!g.is_empty(), "mean_rows over an empty group");
            let w = 1.0 / g.len() as f64;
            let o = out.row_mut(i);
            for &j in g {
                for (oc, ac) in o.iter_mut().zip(av.row(j)) {
                    *oc += ac * w;
                }
            }
        }
        self.push(out, Op::MeanRows(a, groups))
    }

    /// Row-wise cosine similarity as an `n x 1` column. Rows where either
    /// side has zero norm yield 0 with zero gradient.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_cosine shape mismatch");
        let data = (0..av.rows())
            .map(|r| crate::tensor::cosine(av.row(r), bv.row(r)).unwrap_or(0.0))
            .collect();
        let out = Mat::from_vec(av.rows(), 1, data);
        self.push(out, Op::RowCosine(a, b))
    }

    /// Row-wise squared Euclidean distance as an `n x 1` column.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_sq_dist shape mismatch");
        let data = (0..av.rows())
            .map(|r| {
                av.row(r)
                    .iter()
                    .zip(bv.row(r))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        let out = Mat::from_vec(av.rows(), 1, data);
        self.push(out, Op::RowSqDist(a, b))
    }

    /// Elementwise `-ln(sigmoid(x))`, computed stably.
    pub fn neg_log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(neg_log_sigmoid);
        self.push(out, Op::NegLogSigmoid(a))
    }

    /// Mean of all entries as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.data().len();
        let out = Mat::from_vec(1, 1, vec![av.sum() / n as f64]);
        self.push(out, Op::Mean(a))
    }

    /// Gradients of scalar `loss` with respect to every node on the tape.
    pub fn backward_all(&self, loss: Var) -> Vec<Option<Mat>> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    /// Gradients of scalar `loss` with respect to the parameters it touches,
    /// summed over every use of each parameter.
    pub fn backward(&self, loss: Var) -> Vec<(ParamId, Mat)> {
        let grads = self.backward_all(loss);
        let mut out: Vec<(ParamId, Mat)> = Vec::new();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                match out.iter_mut().find(|(pid, _)| pid == id) {
                    Some((_, acc)) => acc.add_assign(&g),
                    None => out.push((*id, g)),
                }
            }
        }
        out
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b));
                let gb = self.value(*a).t_matmul(g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, column_sums(g));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y);
                let gb = g.zip_map(self.value(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
            Op::ScaleRows(a, factors) => {
                let mut ga = g.clone();
                for (r, &f) in factors.iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= f);
                }
                accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (n, m) = g.shape();
                let gv = self.value(*gain).row(0);
                let mut g_gain = Mat::zeros(1, m);
                let mut g_bias = Mat::zeros(1, m);
                let mut gx = Mat::zeros(n, m);
                let mut dxhat = vec![0.0; m];
                for r in 0..n {
                    let gr = g.row(r);
                    let xh = xhat.row(r);
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..m {
                        g_gain.data_mut()[j] += gr[j] * xh[j];
                        g_bias.data_mut()[j] += gr[j];
                        dxhat[j] = gr[j] * gv[j];
                        sum_d += dxhat[j];
                        sum_dx += dxhat[j] * xh[j];
                    }
                    let c = inv_std[r] / m as f64;
                    let o = gx.row_mut(r);
                    for j in 0..m {
                        o[j] = c * (m as f64 * dxhat[j] - sum_d - xh[j] * sum_dx);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, g_gain);
                accumulate(grads, *bias, g_bias);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                len,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (heads, batch, len) = (*heads, *batch, *len);
                let d = qv.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Mat::zeros(batch * len, d);
                let mut gk = Mat::zeros(batch * len, d);
                let mut gvv = Mat::zeros(batch * len, d);
                let mut dp = vec![0.0; len];
                for b in 0..batch {
                    for h in 0..heads {
                        let cs = h * dh..(h + 1) * dh;
                        for i in 0..len {
                            let p = &probs[((b * heads + h) * len + i) * len..][..len];
                            let go = &g.row(b * len + i)[cs.clone()];
                            let mut s = 0.0;
                            for j in 0..len {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                dp[j] = dot(go, &vv.row(b * len + j)[cs.clone()]);
                                s += dp[j] * p[j];
                                let gvj = &mut gvv.row_mut(b * len + j)[cs.clone()];
                                for (x, y) in gvj.iter_mut().zip(go) {
                                    *x += p[j] * y;
                                }
                            }
                            for j in 0..len {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - s) * scale;
                                let kj = kv.row(b * len + j)[cs.clone()].to_vec();
                                let qi = qv.row(b * len + i)[cs.clone()].to_vec();
                                let gqi = &mut gq.row_mut(b * len + i)[cs.clone()];
                                for (x, y) in gqi.iter_mut().zip(&kj) {
                                    *x += ds * y;
                                }
                                let gkj = &mut gk.row_mut(b * len + j)[cs.clone()];
                                for (x, y) in gkj.iter_mut().zip(&qi) {
                                    *x += ds * y;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gvv);
            }
            Op::Rows(a, indices) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows(), av.cols());
                for (o, &r) in indices.iter().enumerate() {
                    for (x, y) in ga.row_mut(r).iter_mut().zip(g.row(o)) {
                        *x += y;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Mat::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    off += w;
                    accumulate(grads, p, gp);
                }
            }
            Op::BroadcastRow(row) => accumulate(grads, *row, column_sums(g)),
            Op::ReplaceRows { base, row, flags } => {
                let mut gb = g.clone();
                let mut gr = Mat::zeros(1, g.cols());
                for (r, &f) in flags.iter().enumerate() {
                    if f {
                        for (x, y) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                        gb.row_mut(r).fill(0.0);
                    }
                }
                accumulate(grads, *base, gb);
                accumulate(grads, *row, gr);
            }
            Op::MeanRows(a, groups) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows(), av.cols());
                for (i, grp) in groups.iter().enumerate() {
                    let w = 1.0 / grp.len() as f64;
                    for &j in grp {
                        for (x, y) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                            *x += w * y;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Mat::zeros(av.rows(), av.cols());
                let mut gb = Mat::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let (x, y) = (av.row(r), bv.row(r));
                    let nx = dot(x, x).sqrt();
                    let ny = dot(y, y).sqrt();
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let c = dot(x, y) / (nx * ny);
                    let gr = g[(r, 0)];
                    let gar = ga.row_mut(r);
                    for j in 0..x.len() {
                        gar[j] = gr * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                    }
                    let gbr = gb.row_mut(r);
                    for j in 0..x.len() {
                        gbr[j] = gr * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::RowSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Mat::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gr = 2.0 * g[(r, 0)];
                    for (j, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (av.row(r)[j] - bv.row(r)[j]);
                    }
                }
                let gb = ga.scale(-1.0);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::NegLogSigmoid(a) => {
                // d/dx -ln sigmoid(x) = -sigmoid(-x)
                let ga = g.zip_map(self.value(*a), |gy, x| -gy * sigmoid(-x));
                accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let w = g[(0, 0)] / (r * c) as f64;
                accumulate(grads, *a, Mat::filled(r, c, w));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], target: Var, g: Mat) {
    match &mut grads[target.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(x)) = ln(1 + e^{-x})`.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}
