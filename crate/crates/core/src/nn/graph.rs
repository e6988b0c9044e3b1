//! Tape-based reverse-mode differentiation over small dense vectors.
//!
//! A [`Graph`] is built fresh for every trace. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! the backward pass is a single reverse sweep. Parameters are read in place
//! from a borrowed [`ParamStore`]; their gradients land in a [`ParamGrads`].

use super::params::{ParamGrads, ParamId, ParamStore};

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
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SumAll(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    LstmCell {
        gates: Var,
        cell: Var,
    },
    Attention(Box<AttentionNode>),
    /// Scalar function of `x` with its gradient precomputed during forward.
    ScalarFn {
        x: Var,
        grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct AttentionNode {
    queries: Var,
    keys: Vec<Var>,
    values: Vec<Var>,
    num_queries: usize,
    scale: f64,
    /// Row-major `num_queries × locations`.
    weights: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "not a scalar");
        val[0]
    }

    /// Constant or differentiable input vector.
    pub fn input(&mut self, data: Vec<f64>) -> Var {
        self.push(data, Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let data = self.params.data(id).to_vec();
        self.push(data, Op::Param(id))
    }

    /// `W x + b` with `W` of shape `[out, in]`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wp = self.params.get(w);
        let (rows, cols) = (wp.shape[0], wp.shape[1]);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "affine input width mismatch");
        let mut out = match b {
            Some(b) => self.params.data(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(&wp.data[r * cols..(r + 1) * cols], xv);
        }
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(out, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Sum of several scalars.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().map(|v| self.scalar(*v)).sum();
        self.push(vec![s], Op::SumAll(xs.to_vec()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(out, Op::Relu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = parts.iter().map(|p| self.value(*p).len()).sum();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x)[start..start + len].to_vec();
        self.push(out, Op::Slice { x, start })
    }

    /// Fused LSTM cell nonlinearity. `gates` holds pre-activations in the
    /// order `[input, forget, candidate, output]`; the result is `[h; c]`.
    pub fn lstm_cell(&mut self, gates: Var, cell: Var) -> Var {
        let hidden = self.value(cell).len();
        let a = self.value(gates);
        assert_eq!(a.len(), 4 * hidden, "gate width mismatch");
        let c_prev = self.value(cell);
        let mut out = vec![0.0; 2 * hidden];
        for j in 0..hidden {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[hidden + j]);
            let g = a[2 * hidden + j].tanh();
            let o = sigmoid(a[3 * hidden + j]);
            let c = f * c_prev[j] + i * g;
            out[j] = o * c.tanh();
            out[hidden + j] = c;
        }
        self.push(out, Op::LstmCell { gates, cell })
    }

    /// Scaled dot-product attention. `queries` is the row-major flattening of
    /// `num_queries × k`; each key has length `k`, each value length `v`.
    /// Output is the concatenation of the per-query weighted value averages.
    pub fn attention(
        &mut self,
        queries: Var,
        keys: &[Var],
        values: &[Var],
        num_queries: usize,
        scale: f64,
    ) -> Var {
        assert!(!keys.is_empty(), "attention needs at least one location");
        assert_eq!(keys.len(), values.len());
        let locs = keys.len();
        let qv = self.value(queries);
        let k = qv.len() / num_queries;
        assert_eq!(qv.len(), num_queries * k);
        let vdim = self.value(values[0]).len();
        let mut weights = vec![0.0; num_queries * locs];
        let mut out = vec![0.0; num_queries * vdim];
        for qi in 0..num_queries {
            let q = &qv[qi * k..(qi + 1) * k];
            let row = &mut weights[qi * locs..(qi + 1) * locs];
            let mut max = f64::NEG_INFINITY;
            for (l, key) in keys.iter().enumerate() {
                let kv = &self.nodes[key.0].value;
                debug_assert_eq!(kv.len(), k);
                row[l] = scale * dot(q, kv);
                max = max.max(row[l]);
            }
            let mut z = 0.0;
            for w in row.iter_mut() {
                *w = (*w - max).exp();
                z += *w;
            }
            for w in row.iter_mut() {
                *w /= z;
            }
            let o = &mut out[qi * vdim..(qi + 1) * vdim];
            for (l, val) in values.iter().enumerate() {
                axpy(row[l], &self.nodes[val.0].value, o);
            }
        }
        self.push(
            out,
            Op::Attention(Box::new(AttentionNode {
                queries,
                keys: keys.to_vec(),
                values: values.to_vec(),
                num_queries,
                scale,
                weights,
            })),
        )
    }

    /// Attention weights of an attention node, `num_queries × locations`.
    pub fn attention_weights(&self, v: Var) -> Option<(usize, &[f64])> {
        match &self.nodes[v.0].op {
            Op::Attention(a) => Some((a.num_queries, &a.weights)),
            _ => None,
        }
    }

    /// Scalar node with value `value` and gradient `grad` w.r.t. `x`.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Var {
        assert_eq!(grad.len(), self.value(x).len());
        self.push(vec![value], Op::ScalarFn { x, grad })
    }

    /// Reverse sweep from scalar `loss`, seeded with `seed`. Parameter
    /// gradients are added into `param_grads`; input gradients are returned.
    pub fn backward_into(&self, loss: Var, seed: f64, param_grads: &mut ParamGrads) -> VarGrads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![seed];

        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
            let g = &mut grads[v.0];
            if g.is_empty() {
                g.resize(len, 0.0);
            }
            g
        }

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let dst = param_grads.slot(*id, g.len());
                    axpy(1.0, &g, dst);
                }
                Op::Affine { w, b, x } => {
                    let wp = self.params.get(*w);
                    let cols = wp.shape[1];
                    let xv = &self.nodes[x.0].value;
                    {
                        let dx = acc(&mut grads, *x, cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                axpy(*gr, &wp.data[r * cols..(r + 1) * cols], dx);
                            }
                        }
                    }
                    let dw = param_grads.slot(*w, wp.data.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            axpy(*gr, xv, &mut dw[r * cols..(r + 1) * cols]);
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, param_grads.slot(*b, g.len()));
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, acc(&mut grads, *a, g.len()));
                    axpy(1.0, &g, acc(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    {
                        let da = acc(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i];
                        }
                    }
                    let db = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
                Op::Scale(a, c) => axpy(*c, &g, acc(&mut grads, *a, g.len())),
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SumAll(xs) => {
                    for x in xs {
                        acc(&mut grads, *x, 1)[0] += g[0];
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Relu(a) => {
                    let xv = &self.nodes[a.0].value;
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        axpy(1.0, &g[off..off + n], acc(&mut grads, *p, n));
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let dx = acc(&mut grads, *x, n);
                    axpy(1.0, &g, &mut dx[*start..*start + g.len()]);
                }
                Op::LstmCell { gates, cell } => {
                    let hidden = g.len() / 2;
                    let a = &self.nodes[gates.0].value;
                    let c_prev = &self.nodes[cell.0].value;
                    let c = &node.value[hidden..];
                    let mut dgates = vec![0.0; 4 * hidden];
                    let mut dcell = vec![0.0; hidden];
                    for j in 0..hidden {
                        let i = sigmoid(a[j]);
                        let f = sigmoid(a[hidden + j]);
                        let gg = a[2 * hidden + j].tanh();
                        let o = sigmoid(a[3 * hidden + j]);
                        let tc = c[j].tanh();
                        let dh = g[j];
                        let dc = g[hidden + j] + dh * o * (1.0 - tc * tc);
                        dgates[j] = dc * gg * i * (1.0 - i);
                        dgates[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
                        dgates[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                        dgates[3 * hidden + j] = dh * tc * o * (1.0 - o);
                        dcell[j] = dc * f;
                    }
                    axpy(1.0, &dgates, acc(&mut grads, *gates, 4 * hidden));
                    axpy(1.0, &dcell, acc(&mut grads, *cell, hidden));
                }
                Op::Attention(att) => {
                    let locs = att.keys.len();
                    let qv = &self.nodes[att.queries.0].value;
                    let k = qv.len() / att.num_queries;
                    let vdim = g.len() / att.num_queries;
                    let mut dq = vec![0.0; qv.len()];
                    let mut dkeys = vec![vec![0.0; k]; locs];
                    let mut dvals = vec![vec![0.0; vdim]; locs];
                    let mut dw = vec![0.0; locs];
                    for qi in 0..att.num_queries {
                        let go = &g[qi * vdim..(qi + 1) * vdim];
                        let w = &att.weights[qi * locs..(qi + 1) * locs];
                        let q = &qv[qi * k..(qi + 1) * k];
                        let mut wdot = 0.0;
                        for l in 0..locs {
                            let val = &self.nodes[att.values[l].0].value;
                            dw[l] = dot(go, val);
                            wdot += w[l] * dw[l];
                            axpy(w[l], go, &mut dvals[l]);
                        }
                        for l in 0..locs {
                            let ds = w[l] * (dw[l] - wdot) * att.scale;
                            if ds != 0.0 {
                                let key = &self.nodes[att.keys[l].0].value;
                                axpy(ds, key, &mut dq[qi * k..(qi + 1) * k]);
                                axpy(ds, q, &mut dkeys[l]);
                            }
                        }
                    }
                    axpy(1.0, &dq, acc(&mut grads, att.queries, qv.len()));
                    for l in 0..locs {
                        axpy(1.0, &dkeys[l], acc(&mut grads, att.keys[l], k));
                        axpy(1.0, &dvals[l], acc(&mut grads, att.values[l], vdim));
                    }
                }
                Op::ScalarFn { x, grad } => {
                    axpy(g[0], grad, acc(&mut grads, *x, grad.len()));
                }
            }
            grads[idx] = g;
        }
        VarGrads { grads }
    }

    /// Backward with unit seed into a fresh gradient buffer.
    pub fn backward(&self, loss: Var) -> (VarGrads, ParamGrads) {
        let mut pg = ParamGrads::new();
        let vg = self.backward_into(loss, 1.0, &mut pg);
        (vg, pg)
    }
}

/// Gradients of the loss w.r.t. graph nodes (inputs included).
pub struct VarGrads {
    grads: Vec<Vec<f64>>,
}

impl VarGrads {
    /// Gradient w.r.t. `v`; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .get(v.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }
}
