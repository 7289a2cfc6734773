//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its value and whatever it needs for
//! the backward pass. `Tape::backward` walks the nodes in exact reverse order of
//! recording, so the adjoint of a node is complete before it is propagated.
//! Nodes that do not reach the seed keep a zero adjoint.

use super::array::{leaky_relu_grad, matmul_into, normalize, softmax_masked, Array};
use crate::error::{MastError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-row cos/sin phases for rotating complex pairs, shared by every head.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTable {
    pub rows: usize,
    /// Complex pairs per head.
    pub pairs: usize,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    LeakyRelu(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Rotate {
        x: Var,
        heads: usize,
        phases: PhaseTable,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Vec<bool>,
        scale: f64,
        probs: Vec<f64>,
    },
    ClipNorm {
        x: Var,
        max: f64,
        norms: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Array,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// A linear recording of array operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `var`; zeros when the node did not influence the seed.
    pub fn get(&self, var: Var) -> Array {
        match &self.adjoints[var.0] {
            Some(a) => a.clone(),
            None => Array::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Array {
        match self.adjoints[var.0].take() {
            Some(a) => a,
            None => Array::zeros(&self.shapes[var.0]),
        }
    }
}

fn shape_err(op: &'static str, a: &Array, b: &Array) -> MastError {
    MastError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % cols];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    /// Row-wise layer normalization.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(shape_err("layernorm", xv, gv));
        }
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Array::zeros(xv.shape());
        for i in 0..rows {
            let (h, s) = normalize(xv.row(i));
            let orow = out.row_mut(i);
            for j in 0..d {
                orow[j] = h[j] * gv.data()[j] + bv.data()[j];
            }
            xhat.extend(h);
            inv_std.push(s);
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Rotates consecutive column pairs `(2m, 2m+1)` of every head by the
    /// row's phases: `(a, b) -> (a cos θ − b sin θ, a sin θ + b cos θ)`.
    pub fn rotate(&mut self, x: Var, heads: usize, phases: PhaseTable) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != phases.rows || xv.cols() != heads * 2 * phases.pairs {
            return Err(MastError::Shape {
                op: "rotate",
                lhs: xv.shape().to_vec(),
                rhs: vec![phases.rows, heads * 2 * phases.pairs],
            });
        }
        let out = rotate_pairs(xv, heads, &phases, false);
        Ok(self.push(out, Op::Rotate { x, heads, phases }))
    }

    /// Masked multi-head attention core. `q`, `k`, `v` are `N × H·d_a`; head
    /// `h` owns columns `h·d_a..(h+1)·d_a`. Returns the concatenated head
    /// outputs. `mask[i·N + j]` lets row `i` attend to row `j`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &[bool],
        scale: f64,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let n = qv.rows();
        let width = qv.cols();
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() || mask.len() != n * n {
            return Err(shape_err("attention", qv, kv));
        }
        if heads == 0 || width % heads != 0 {
            return Err(MastError::Config(format!(
                "attention width {width} not divisible by {heads} heads"
            )));
        }
        let da = width / heads;
        let mut probs = vec![0.0; heads * n * n];
        let mut out = Array::zeros(&[n, width]);
        let mut logits = vec![0.0; n];
        for h in 0..heads {
            let c0 = h * da;
            for i in 0..n {
                let qi = &qv.row(i)[c0..c0 + da];
                let mrow = &mask[i * n..(i + 1) * n];
                for j in 0..n {
                    logits[j] = if mrow[j] {
                        let kj = &kv.row(j)[c0..c0 + da];
                        scale * dot(qi, kj)
                    } else {
                        0.0
                    };
                }
                let p = softmax_masked(&logits, mrow)?;
                let orow = &mut out.row_mut(i)[c0..c0 + da];
                for j in 0..n {
                    if p[j] != 0.0 {
                        let vj = &vv.row(j)[c0..c0 + da];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p[j] * x;
                        }
                    }
                }
                probs[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask: mask.to_vec(),
                scale,
                probs,
            },
        ))
    }

    /// Rescales each row whose Euclidean norm exceeds `max` onto the ball.
    pub fn clip_norm(&mut self, x: Var, max: f64) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > max {
                for v in row.iter_mut() {
                    *v *= max / norm;
                }
            }
            norms.push(norm);
        }
        self.push(out, Op::ClipNorm { x, max, norms })
    }

    /// `mean_i ‖pred_i − target_i‖²` over rows.
    pub fn mse(&mut self, pred: Var, target: &Array) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err("mse", pv, target));
        }
        let rows = pv.rows().max(1) as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Array::scalar(total / rows),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Back-propagates from `seed`, whose adjoint is initialized to ones
    /// (the gradient of the sum of its entries).
    pub fn backward(&self, seed: Var) -> Gradients {
        let mut adj: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[seed.0] = Some(Array::filled(self.value(seed).shape(), 1.0));
        for idx in (0..=seed.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn propagate(&self, idx: usize, g: &Array, adj: &mut [Option<Array>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = dC·Bᵀ
                let bt = bv.transpose();
                let mut da = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                accumulate(adj, *a, av.shape(), &da);
                // dB = Aᵀ·dC
                let at = av.transpose();
                let mut db = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut db, k, m, n);
                accumulate(adj, *b, bv.shape(), &db);
            }
            Op::AddBias(x, bias) => {
                accumulate(adj, *x, g.shape(), g.data());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % cols] += v;
                }
                accumulate(adj, *bias, self.value(*bias).shape(), &db);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.shape(), g.data());
                accumulate(adj, *b, g.shape(), g.data());
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, &xi)| gv * leaky_relu_grad(xi, *slope))
                    .collect();
                accumulate(adj, *x, xv.shape(), &dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                let rows = g.rows();
                let mut dx = vec![0.0; rows * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..rows {
                    let gr = g.row(i);
                    let h = &xhat[i * d..(i + 1) * d];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                        dgain[j] += gr[j] * h[j];
                        dbias[j] += gr[j];
                    }
                    let s = inv_std[i] / d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dx[i * d + j] = s * (d as f64 * dh - sum_dh - h[j] * sum_dh_h);
                    }
                }
                accumulate(adj, *x, g.shape(), &dx);
                accumulate(adj, *gain, self.value(*gain).shape(), &dgain);
                accumulate(adj, *bias, self.value(*bias).shape(), &dbias);
            }
            Op::Rotate { x, heads, phases } => {
                let dx = rotate_pairs(g, *heads, phases, true);
                accumulate(adj, *x, g.shape(), dx.data());
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let n = qv.rows();
                let width = qv.cols();
                let da = width / heads;
                let mut dq = vec![0.0; n * width];
                let mut dk = vec![0.0; n * width];
                let mut dv = vec![0.0; n * width];
                let mut dp = vec![0.0; n];
                for h in 0..*heads {
                    let c0 = h * da;
                    for i in 0..n {
                        let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                        let gi = &g.row(i)[c0..c0 + da];
                        let mut weighted = 0.0;
                        for j in 0..n {
                            if !mask[i * n + j] {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vj = &vv.row(j)[c0..c0 + da];
                            dp[j] = dot(gi, vj);
                            weighted += p[j] * dp[j];
                            let dvj = &mut dv[j * width + c0..j * width + c0 + da];
                            for (d, &gg) in dvj.iter_mut().zip(gi) {
                                *d += p[j] * gg;
                            }
                        }
                        let qi = &qv.row(i)[c0..c0 + da];
                        for j in 0..n {
                            if !mask[i * n + j] {
                                continue;
                            }
                            let dlogit = scale * p[j] * (dp[j] - weighted);
                            if dlogit == 0.0 {
                                continue;
                            }
                            let kj = &kv.row(j)[c0..c0 + da];
                            let dqi = &mut dq[i * width + c0..i * width + c0 + da];
                            for (d, &kk) in dqi.iter_mut().zip(kj) {
                                *d += dlogit * kk;
                            }
                            let dkj = &mut dk[j * width + c0..j * width + c0 + da];
                            for (d, &qq) in dkj.iter_mut().zip(qi) {
                                *d += dlogit * qq;
                            }
                        }
                    }
                }
                accumulate(adj, *q, qv.shape(), &dq);
                accumulate(adj, *k, kv.shape(), &dk);
                accumulate(adj, *v, vv.shape(), &dv);
            }
            Op::ClipNorm { x, max, norms } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut dx = g.data().to_vec();
                for (i, &norm) in norms.iter().enumerate() {
                    if norm <= *max {
                        continue;
                    }
                    // d/dx (max·x/‖x‖) = (max/‖x‖)(I − x̂x̂ᵀ)
                    let xr = xv.row(i);
                    let gr = g.row(i);
                    let proj: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
                    for j in 0..cols {
                        dx[i * cols + j] = (max / norm) * (gr[j] - proj * xr[j]);
                    }
                }
                accumulate(adj, *x, xv.shape(), &dx);
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = 2.0 * g.data()[0] / pv.rows().max(1) as f64;
                let dx: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                accumulate(adj, *pred, pv.shape(), &dx);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Array>], var: Var, shape: &[usize], delta: &[f64]) {
    match &mut adj[var.0] {
        Some(a) => {
            for (x, d) in a.data_mut().iter_mut().zip(delta) {
                *x += d;
            }
        }
        slot @ None => {
            *slot = Some(Array::new(shape.to_vec(), delta.to_vec()).expect("adjoint shape"));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate_pairs(x: &Array, heads: usize, phases: &PhaseTable, inverse: bool) -> Array {
    let mut out = x.clone();
    let cols = x.cols();
    let per_head = 2 * phases.pairs;
    for i in 0..x.rows() {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        for h in 0..heads {
            for m in 0..phases.pairs {
                let c = phases.cos[i * phases.pairs + m];
                let s = if inverse {
                    -phases.sin[i * phases.pairs + m]
                } else {
                    phases.sin[i * phases.pairs + m]
                };
                let base = h * per_head + 2 * m;
                let (a, b) = (row[base], row[base + 1]);
                row[base] = a * c - b * s;
                row[base + 1] = a * s + b * c;
            }
        }
    }
    out
}
