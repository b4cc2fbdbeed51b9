//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! The policy's forward pass is written once against the [`Engine`] trait and
//! instantiated with two backends: [`Tape`] records every operation so
//! [`Tape::backward`] can propagate gradients, while [`Eval`] keeps values
//! only and lets callers free per-step temporaries with [`Engine::mark`] /
//! [`Engine::release`] (a rollout at n = 400 would otherwise retain gigabytes
//! of attention intermediates). Both backends share the same numeric kernels,
//! so forward values are bit-identical regardless of which one runs.

/// Dense row-major f64 matrix. Column vectors are `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn col_vec(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::from_vec(rows, 1, data)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Kernels (shared by both engines and by the backward pass)
// ---------------------------------------------------------------------------

pub(crate) fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `a^T * c` without materializing the transpose; a: m x k, c: m x n -> k x n.
fn matmul_at(a: &Mat, c: &Mat) -> Mat {
    assert_eq!(a.rows, c.rows);
    let mut out = Mat::zeros(a.cols, c.cols);
    for m in 0..a.rows {
        let arow = a.row(m);
        let crow = c.row(m);
        for (k, &amk) in arow.iter().enumerate() {
            if amk == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * c.cols..(k + 1) * c.cols];
            for (o, &cmn) in orow.iter_mut().zip(crow) {
                *o += amk * cmn;
            }
        }
    }
    out
}

/// `c * b^T`; c: m x n, b: k x n -> m x k.
fn matmul_bt(c: &Mat, b: &Mat) -> Mat {
    assert_eq!(c.cols, b.cols);
    let mut out = Mat::zeros(c.rows, b.rows);
    for m in 0..c.rows {
        let crow = c.row(m);
        let orow = &mut out.data[m * b.rows..(m + 1) * b.rows];
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = b.row(k);
            let mut acc = 0.0;
            for (&x, &y) in crow.iter().zip(brow) {
                acc += x * y;
            }
            *o += acc;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Mat::from_vec(a.rows, a.cols, data)
}

fn add_col(m: &Mat, v: &Mat) -> Mat {
    assert_eq!(v.cols, 1);
    assert_eq!(m.rows, v.rows);
    let mut out = m.clone();
    for r in 0..m.rows {
        let vr = v.data[r];
        for x in &mut out.data[r * m.cols..(r + 1) * m.cols] {
            *x += vr;
        }
    }
    out
}

fn scale(a: &Mat, k: f64) -> Mat {
    let data = a.data.iter().map(|x| x * k).collect();
    Mat::from_vec(a.rows, a.cols, data)
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Mat::from_vec(a.rows, a.cols, data)
}

fn map_unary(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat::from_vec(a.rows, a.cols, a.data.iter().map(|&x| f(x)).collect())
}

fn mean_cols(a: &Mat) -> Mat {
    let inv = 1.0 / a.cols as f64;
    let mut out = Mat::zeros(a.rows, 1);
    for r in 0..a.rows {
        out.data[r] = a.row(r).iter().sum::<f64>() * inv;
    }
    out
}

fn broadcast_col(v: &Mat, cols: usize) -> Mat {
    assert_eq!(v.cols, 1);
    let mut out = Mat::zeros(v.rows, cols);
    for r in 0..v.rows {
        out.data[r * cols..(r + 1) * cols].fill(v.data[r]);
    }
    out
}

fn gather_cols(a: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(a.rows, idx.len());
    for r in 0..a.rows {
        let arow = a.row(r);
        let orow = &mut out.data[r * idx.len()..(r + 1) * idx.len()];
        for (o, &j) in orow.iter_mut().zip(idx) {
            *o = arow[j];
        }
    }
    out
}

fn column(a: &Mat, j: usize) -> Mat {
    let mut out = Mat::zeros(a.rows, 1);
    for r in 0..a.rows {
        out.data[r] = a.get(r, j);
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    let mut out = Mat::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        let arow = a.row(r);
        for (c, &v) in arow.iter().enumerate() {
            out.data[c * a.rows + r] = v;
        }
    }
    out
}

/// Additive attention scores over the feasible rows of a transposed key
/// matrix: `s_f = scale * sum_j v_j * tanh(kt[f][j] + q[j])`.
fn attention_scores_forward(kt: &Mat, q: &Mat, v: &Mat, feasible: &[usize], scale: f64) -> Mat {
    assert_eq!(q.cols, 1);
    assert_eq!(v.rows, 1);
    assert_eq!(kt.cols, q.rows);
    assert_eq!(v.cols, q.rows);
    let mut out = Mat::zeros(1, feasible.len());
    for (slot, &f) in feasible.iter().enumerate() {
        let row = kt.row(f);
        let mut acc = 0.0;
        for j in 0..row.len() {
            acc += v.data[j] * (row[j] + q.data[j]).tanh();
        }
        out.data[slot] = acc * scale;
    }
    out
}

fn edge_context(x: &Mat, base: &Mat, pairs: &[(usize, usize)]) -> Mat {
    assert_eq!(base.cols, pairs.len());
    assert_eq!(base.rows, x.rows);
    let mut out = base.clone();
    for r in 0..x.rows {
        let xrow = x.row(r);
        let orow = &mut out.data[r * pairs.len()..(r + 1) * pairs.len()];
        for (o, &(u, v)) in orow.iter_mut().zip(pairs) {
            *o += xrow[u] + xrow[v];
        }
    }
    out
}

/// Numerically stable softmax over a 1 x m score row.
pub(crate) fn softmax_probs(scores: &Mat) -> Vec<f64> {
    assert_eq!(scores.rows, 1);
    let max = scores.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.data.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-probabilities, chosen-entry log-prob, and entropy of the softmax.
/// Entries with zero probability contribute zero entropy by convention.
fn softmax_stats_forward(scores: &Mat, chosen: Option<usize>) -> (Vec<f64>, Vec<f64>, Mat) {
    assert_eq!(scores.rows, 1);
    let max = scores.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &s in &scores.data {
        sum += (s - max).exp();
    }
    let log_z = max + sum.ln();
    let logp: Vec<f64> = scores.data.iter().map(|&s| s - log_z).collect();
    let probs: Vec<f64> = logp.iter().map(|&lp| lp.exp()).collect();
    let mut entropy = 0.0;
    for (&p, &lp) in probs.iter().zip(&logp) {
        if p > 0.0 {
            entropy -= p * lp;
        }
    }
    let chosen_logp = chosen.map_or(0.0, |c| logp[c]);
    (probs, logp, Mat::from_vec(2, 1, vec![chosen_logp, entropy]))
}

// ---------------------------------------------------------------------------
// Engine trait
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy)]
pub struct Mark(usize);

/// Forward-pass operations shared by the recording and value-only backends.
pub trait Engine {
    fn leaf(&mut self, m: Mat) -> VarId;
    fn val(&self, v: VarId) -> &Mat;

    fn matmul(&mut self, a: VarId, b: VarId) -> VarId;
    fn add(&mut self, a: VarId, b: VarId) -> VarId;
    fn add_n(&mut self, xs: &[VarId]) -> VarId;
    fn add_col(&mut self, m: VarId, v: VarId) -> VarId;
    fn scale(&mut self, a: VarId, k: f64) -> VarId;
    fn tanh(&mut self, a: VarId) -> VarId;
    fn sigmoid(&mut self, a: VarId) -> VarId;
    fn relu(&mut self, a: VarId) -> VarId;
    fn hadamard(&mut self, a: VarId, b: VarId) -> VarId;
    fn mean_cols(&mut self, a: VarId) -> VarId;
    fn broadcast_col(&mut self, v: VarId, cols: usize) -> VarId;
    fn gather_cols(&mut self, a: VarId, idx: &[usize]) -> VarId;
    fn col(&mut self, a: VarId, j: usize) -> VarId;
    fn entry(&mut self, a: VarId, r: usize, c: usize) -> VarId;
    fn transpose(&mut self, a: VarId) -> VarId;
    /// Sum of each column's base embedding and its two endpoint embeddings.
    fn edge_endpoint_sum(&mut self, x: VarId, base: VarId, pairs: &[(usize, usize)]) -> VarId;
    /// Fused additive attention: scores over the feasible rows of the
    /// transposed key matrix `kt` (rows = edges), query column `q`, score
    /// row `v`, multiplied by `scale`.
    fn attention_scores(
        &mut self,
        kt: VarId,
        q: VarId,
        v: VarId,
        feasible: &[usize],
        scale: f64,
    ) -> VarId;
    /// Softmax over a 1 x m score row; returns the probabilities and a 2 x 1
    /// node holding [log p(chosen), entropy].
    fn softmax_stats(&mut self, scores: VarId, chosen: Option<usize>) -> (Vec<f64>, VarId);

    /// Marks the current frontier; a later [`Engine::release`] may free
    /// everything allocated after it.
    fn mark(&mut self) -> Mark;
    /// Frees nodes allocated after `mark`, preserving the listed ids (their
    /// entries are rewritten to the surviving slots). No-op on [`Tape`].
    fn release(&mut self, mark: Mark, keep: &mut [&mut VarId]);
}

// ---------------------------------------------------------------------------
// Recording backend
// ---------------------------------------------------------------------------

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    AddN(Vec<VarId>),
    AddCol(VarId, VarId),
    Scale(VarId, f64),
    Tanh(VarId),
    Sigmoid(VarId),
    Relu(VarId),
    Hadamard(VarId, VarId),
    MeanCols(VarId),
    BroadcastCol(VarId),
    GatherCols(VarId, Vec<usize>),
    Col(VarId, usize),
    Entry(VarId, usize, usize),
    Transpose(VarId),
    EdgeEndpointSum(VarId, VarId, Vec<(usize, usize)>),
    AttentionScores {
        kt: VarId,
        q: VarId,
        v: VarId,
        feasible: Vec<usize>,
        scale: f64,
    },
    SoftmaxStats {
        scores: VarId,
        chosen: Option<usize>,
        probs: Vec<f64>,
        logp: Vec<f64>,
    },
}

struct Node {
    val: Mat,
    op: Op,
}

/// Records the forward pass for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, val: Mat, op: Op) -> VarId {
        self.nodes.push(Node { val, op });
        VarId(self.nodes.len() - 1)
    }

    /// Backpropagates from a 1 x 1 loss node, returning per-node gradients.
    pub fn backward(&self, loss: VarId) -> Grads {
        let node = &self.nodes[loss.0];
        assert_eq!((node.val.rows, node.val.cols), (1, 1), "loss must be scalar");
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = g[idx].take() else { continue };
            let put_back = |g: &mut Vec<Option<Mat>>, gout: Mat| g[idx] = Some(gout);
            macro_rules! acc {
                ($target:expr, $grad:expr) => {{
                    let t: VarId = $target;
                    let grad: Mat = $grad;
                    match &mut g[t.0] {
                        Some(existing) => {
                            for (e, x) in existing.data.iter_mut().zip(&grad.data) {
                                *e += x;
                            }
                        }
                        slot => *slot = Some(grad),
                    }
                }};
            }
            match &self.nodes[idx].op {
                Op::Leaf => {
                    put_back(&mut g, gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_bt(&gout, &self.nodes[b.0].val);
                    let gb = matmul_at(&self.nodes[a.0].val, &gout);
                    acc!(*a, ga);
                    acc!(*b, gb);
                }
                Op::Add(a, b) => {
                    acc!(*a, gout.clone());
                    acc!(*b, gout);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        acc!(*x, gout.clone());
                    }
                }
                Op::AddCol(m, v) => {
                    let cols = gout.cols;
                    let mut gv = Mat::zeros(gout.rows, 1);
                    for r in 0..gout.rows {
                        gv.data[r] = gout.data[r * cols..(r + 1) * cols].iter().sum();
                    }
                    acc!(*m, gout);
                    acc!(*v, gv);
                }
                Op::Scale(a, k) => acc!(*a, scale(&gout, *k)),
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].val;
                    let data = gout
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    acc!(*a, Mat::from_vec(gout.rows, gout.cols, data));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].val;
                    let data = gout
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    acc!(*a, Mat::from_vec(gout.rows, gout.cols, data));
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].val;
                    let data = gout
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc!(*a, Mat::from_vec(gout.rows, gout.cols, data));
                }
                Op::Hadamard(a, b) => {
                    acc!(*a, hadamard(&gout, &self.nodes[b.0].val));
                    acc!(*b, hadamard(&gout, &self.nodes[a.0].val));
                }
                Op::MeanCols(a) => {
                    let src = &self.nodes[a.0].val;
                    let inv = 1.0 / src.cols as f64;
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        let gr = gout.data[r] * inv;
                        ga.data[r * src.cols..(r + 1) * src.cols].fill(gr);
                    }
                    acc!(*a, ga);
                }
                Op::BroadcastCol(v) => {
                    let mut gv = Mat::zeros(gout.rows, 1);
                    for r in 0..gout.rows {
                        gv.data[r] = gout.row(r).iter().sum();
                    }
                    acc!(*v, gv);
                }
                Op::GatherCols(a, idx_list) => {
                    let src = &self.nodes[a.0].val;
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        let grow = gout.row(r);
                        let garow = &mut ga.data[r * src.cols..(r + 1) * src.cols];
                        for (g, &j) in grow.iter().zip(idx_list) {
                            garow[j] += g;
                        }
                    }
                    acc!(*a, ga);
                }
                Op::Col(a, j) => {
                    let src = &self.nodes[a.0].val;
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        ga.set(r, *j, gout.data[r]);
                    }
                    acc!(*a, ga);
                }
                Op::Entry(a, r, c) => {
                    let src = &self.nodes[a.0].val;
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    ga.set(*r, *c, gout.data[0]);
                    acc!(*a, ga);
                }
                Op::Transpose(a) => {
                    acc!(*a, transpose(&gout));
                }
                Op::AttentionScores {
                    kt,
                    q,
                    v,
                    feasible,
                    scale,
                } => {
                    let ktm = &self.nodes[kt.0].val;
                    let qm = &self.nodes[q.0].val;
                    let vm = &self.nodes[v.0].val;
                    let d = qm.rows;
                    let mut gkt = Mat::zeros(ktm.rows, ktm.cols);
                    let mut gq = Mat::zeros(d, 1);
                    let mut gv = Mat::zeros(1, d);
                    for (slot, &f) in feasible.iter().enumerate() {
                        let g = gout.data[slot] * scale;
                        if g == 0.0 {
                            continue;
                        }
                        let row = ktm.row(f);
                        let grow = &mut gkt.data[f * d..(f + 1) * d];
                        for j in 0..d {
                            let u = (row[j] + qm.data[j]).tanh();
                            let du = g * vm.data[j] * (1.0 - u * u);
                            grow[j] += du;
                            gq.data[j] += du;
                            gv.data[j] += g * u;
                        }
                    }
                    acc!(*kt, gkt);
                    acc!(*q, gq);
                    acc!(*v, gv);
                }
                Op::EdgeEndpointSum(x, base, pairs) => {
                    let xs = &self.nodes[x.0].val;
                    let mut gx = Mat::zeros(xs.rows, xs.cols);
                    for r in 0..xs.rows {
                        let grow = gout.row(r);
                        let gxrow = &mut gx.data[r * xs.cols..(r + 1) * xs.cols];
                        for (g, &(u, v)) in grow.iter().zip(pairs) {
                            gxrow[u] += g;
                            gxrow[v] += g;
                        }
                    }
                    acc!(*x, gx);
                    acc!(*base, gout);
                }
                Op::SoftmaxStats {
                    scores,
                    chosen,
                    probs,
                    logp,
                } => {
                    let g_lp = gout.data[0];
                    let g_h = gout.data[1];
                    let entropy = self.nodes[idx].val.data[1];
                    let mut gs = Mat::zeros(1, probs.len());
                    for f in 0..probs.len() {
                        let mut d = 0.0;
                        if let Some(c) = chosen {
                            let delta = if f == *c { 1.0 } else { 0.0 };
                            d += g_lp * (delta - probs[f]);
                        }
                        if probs[f] > 0.0 {
                            d -= g_h * probs[f] * (logp[f] + entropy);
                        }
                        gs.data[f] = d;
                    }
                    acc!(*scores, gs);
                }
            }
        }
        Grads { g }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    g: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: VarId) -> Option<&Mat> {
        self.g[v.0].as_ref()
    }
}

impl Engine for Tape {
    fn leaf(&mut self, m: Mat) -> VarId {
        self.push(m, Op::Leaf)
    }

    fn val(&self, v: VarId) -> &Mat {
        &self.nodes[v.0].val
    }

    fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let val = matmul(self.val(a), self.val(b));
        self.push(val, Op::MatMul(a, b))
    }

    fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let val = add(self.val(a), self.val(b));
        self.push(val, Op::Add(a, b))
    }

    fn add_n(&mut self, xs: &[VarId]) -> VarId {
        assert!(!xs.is_empty());
        let mut val = self.val(xs[0]).clone();
        for x in &xs[1..] {
            val = add(&val, self.val(*x));
        }
        self.push(val, Op::AddN(xs.to_vec()))
    }

    fn add_col(&mut self, m: VarId, v: VarId) -> VarId {
        let val = add_col(self.val(m), self.val(v));
        self.push(val, Op::AddCol(m, v))
    }

    fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let val = scale(self.val(a), k);
        self.push(val, Op::Scale(a, k))
    }

    fn tanh(&mut self, a: VarId) -> VarId {
        let val = map_unary(self.val(a), f64::tanh);
        self.push(val, Op::Tanh(a))
    }

    fn sigmoid(&mut self, a: VarId) -> VarId {
        let val = map_unary(self.val(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(val, Op::Sigmoid(a))
    }

    fn relu(&mut self, a: VarId) -> VarId {
        let val = map_unary(self.val(a), |x| x.max(0.0));
        self.push(val, Op::Relu(a))
    }

    fn hadamard(&mut self, a: VarId, b: VarId) -> VarId {
        let val = hadamard(self.val(a), self.val(b));
        self.push(val, Op::Hadamard(a, b))
    }

    fn mean_cols(&mut self, a: VarId) -> VarId {
        let val = mean_cols(self.val(a));
        self.push(val, Op::MeanCols(a))
    }

    fn broadcast_col(&mut self, v: VarId, cols: usize) -> VarId {
        let val = broadcast_col(self.val(v), cols);
        self.push(val, Op::BroadcastCol(v))
    }

    fn gather_cols(&mut self, a: VarId, idx: &[usize]) -> VarId {
        let val = gather_cols(self.val(a), idx);
        self.push(val, Op::GatherCols(a, idx.to_vec()))
    }

    fn col(&mut self, a: VarId, j: usize) -> VarId {
        let val = column(self.val(a), j);
        self.push(val, Op::Col(a, j))
    }

    fn entry(&mut self, a: VarId, r: usize, c: usize) -> VarId {
        let val = Mat::from_vec(1, 1, vec![self.val(a).get(r, c)]);
        self.push(val, Op::Entry(a, r, c))
    }

    fn transpose(&mut self, a: VarId) -> VarId {
        let val = transpose(self.val(a));
        self.push(val, Op::Transpose(a))
    }

    fn edge_endpoint_sum(&mut self, x: VarId, base: VarId, pairs: &[(usize, usize)]) -> VarId {
        let val = edge_context(self.val(x), self.val(base), pairs);
        self.push(val, Op::EdgeEndpointSum(x, base, pairs.to_vec()))
    }

    fn attention_scores(
        &mut self,
        kt: VarId,
        q: VarId,
        v: VarId,
        feasible: &[usize],
        scale: f64,
    ) -> VarId {
        let val = attention_scores_forward(self.val(kt), self.val(q), self.val(v), feasible, scale);
        self.push(
            val,
            Op::AttentionScores {
                kt,
                q,
                v,
                feasible: feasible.to_vec(),
                scale,
            },
        )
    }

    fn softmax_stats(&mut self, scores: VarId, chosen: Option<usize>) -> (Vec<f64>, VarId) {
        let (probs, logp, stats) = softmax_stats_forward(self.val(scores), chosen);
        let id = self.push(
            stats,
            Op::SoftmaxStats {
                scores,
                chosen,
                probs: probs.clone(),
                logp,
            },
        );
        (probs, id)
    }

    fn mark(&mut self) -> Mark {
        Mark(0)
    }

    fn release(&mut self, _mark: Mark, _keep: &mut [&mut VarId]) {}
}

// ---------------------------------------------------------------------------
// Value-only backend
// ---------------------------------------------------------------------------

/// Forward-only backend: identical values, no gradient bookkeeping, and
/// explicit reclamation of per-step temporaries.
#[derive(Default)]
pub struct Eval {
    vals: Vec<Mat>,
}

impl Eval {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, val: Mat) -> VarId {
        self.vals.push(val);
        VarId(self.vals.len() - 1)
    }
}

impl Engine for Eval {
    fn leaf(&mut self, m: Mat) -> VarId {
        self.push(m)
    }

    fn val(&self, v: VarId) -> &Mat {
        &self.vals[v.0]
    }

    fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = matmul(self.val(a), self.val(b));
        self.push(v)
    }

    fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = add(self.val(a), self.val(b));
        self.push(v)
    }

    fn add_n(&mut self, xs: &[VarId]) -> VarId {
        assert!(!xs.is_empty());
        let mut v = self.val(xs[0]).clone();
        for x in &xs[1..] {
            v = add(&v, self.val(*x));
        }
        self.push(v)
    }

    fn add_col(&mut self, m: VarId, v: VarId) -> VarId {
        let out = add_col(self.val(m), self.val(v));
        self.push(out)
    }

    fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let v = scale(self.val(a), k);
        self.push(v)
    }

    fn tanh(&mut self, a: VarId) -> VarId {
        let v = map_unary(self.val(a), f64::tanh);
        self.push(v)
    }

    fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = map_unary(self.val(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(v)
    }

    fn relu(&mut self, a: VarId) -> VarId {
        let v = map_unary(self.val(a), |x| x.max(0.0));
        self.push(v)
    }

    fn hadamard(&mut self, a: VarId, b: VarId) -> VarId {
        let v = hadamard(self.val(a), self.val(b));
        self.push(v)
    }

    fn mean_cols(&mut self, a: VarId) -> VarId {
        let v = mean_cols(self.val(a));
        self.push(v)
    }

    fn broadcast_col(&mut self, v: VarId, cols: usize) -> VarId {
        let out = broadcast_col(self.val(v), cols);
        self.push(out)
    }

    fn gather_cols(&mut self, a: VarId, idx: &[usize]) -> VarId {
        let v = gather_cols(self.val(a), idx);
        self.push(v)
    }

    fn col(&mut self, a: VarId, j: usize) -> VarId {
        let v = column(self.val(a), j);
        self.push(v)
    }

    fn entry(&mut self, a: VarId, r: usize, c: usize) -> VarId {
        let v = Mat::from_vec(1, 1, vec![self.val(a).get(r, c)]);
        self.push(v)
    }

    fn transpose(&mut self, a: VarId) -> VarId {
        let v = transpose(self.val(a));
        self.push(v)
    }

    fn edge_endpoint_sum(&mut self, x: VarId, base: VarId, pairs: &[(usize, usize)]) -> VarId {
        let v = edge_context(self.val(x), self.val(base), pairs);
        self.push(v)
    }

    fn attention_scores(
        &mut self,
        kt: VarId,
        q: VarId,
        v: VarId,
        feasible: &[usize],
        scale: f64,
    ) -> VarId {
        let out = attention_scores_forward(self.val(kt), self.val(q), self.val(v), feasible, scale);
        self.push(out)
    }

    fn softmax_stats(&mut self, scores: VarId, chosen: Option<usize>) -> (Vec<f64>, VarId) {
        let (probs, _, stats) = softmax_stats_forward(self.val(scores), chosen);
        let id = self.push(stats);
        (probs, id)
    }

    fn mark(&mut self) -> Mark {
        Mark(self.vals.len())
    }

    fn release(&mut self, mark: Mark, keep: &mut [&mut VarId]) {
        let kept: Vec<Option<Mat>> = keep
            .iter()
            .map(|id| (id.0 >= mark.0).then(|| self.vals[id.0].clone()))
            .collect();
        self.vals.truncate(mark.0);
        for (id, val) in keep.iter_mut().zip(kept) {
            // ids below the mark survive truncation unchanged
            if let Some(val) = val {
                **id = self.push(val);
            }
        }
    }
}
