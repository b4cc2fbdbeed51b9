//! Sequential edge-selection policy over complete Euclidean graphs.
//!
//! One architecture serves two sampling problems: spanning trees over the
//! whole vertex set and perfect matchings over a designated even-sized vertex
//! subset. The encoder embeds vertices, runs `L` rounds of residual mean
//! aggregation
//!
//! ```text
//! x_u^l = gamma * Theta_l x_u^{l-1}
//!       + (1 - gamma) * phi_l( mean_{v in N(u) + u} x_v^{l-1} )
//! ```
//!
//! and forms one embedding per canonical edge, `z_uv = eta(f_uv) + x_u^L +
//! x_v^L`, where `f_uv` packs the edge weight and both endpoint coordinates.
//! The decoder is recurrent: an LSTM consumes the previously chosen edge's
//! embedding and its hidden state queries an additive attention over the
//! feasible edges,
//!
//! ```text
//! Y_uv = v' tanh(W_key z_uv + W_query q),    P = softmax(d * Y | feasible)
//! ```
//!
//! with infeasible edges receiving probability exactly zero. Feasibility is
//! acyclicity (tree mode) or endpoint availability (matching mode), so every
//! completed rollout is a valid spanning tree or perfect matching by
//! construction.

mod checkpoint;

pub use checkpoint::{
    file_digest as checkpoint_digest, load_checkpoint, save_checkpoint, CheckpointError,
    CheckpointMeta,
};

use crate::instance::{EdgeId, Instance};
use crate::tape::{Engine, Eval, Grads, Mat, Tape, VarId};
use crate::unionfind::UnionFind;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("matching mode requires an even vertex subset of size >= 2, got {0}")]
    InvalidSubset(String),
    #[error("no feasible action at step {step}; masking invariant violated")]
    NoFeasibleAction { step: usize },
    #[error("non-finite values in {stage}")]
    NonFinite { stage: String },
    #[error("forced edge {edge} is infeasible at step {step}")]
    ForcedInfeasible { edge: EdgeId, step: usize },
    #[error("forced sequence ended before rollout completed at step {step}")]
    ForcedExhausted { step: usize },
    #[error("spanning tree needs {expected} edges, got {actual}")]
    WrongEdgeCount { expected: usize, actual: usize },
    #[error("edge set contains a cycle or repeated edge")]
    CyclicEdges,
    #[error("edge set does not connect all vertices")]
    Disconnected,
    #[error("not a perfect matching on the subset: {0}")]
    NotPerfectMatching(String),
    #[error("vertex {vertex} out of range for instance of size {n}")]
    VertexOutOfRange { vertex: usize, n: usize },
}

/// Which combinatorial object the policy assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tree,
    Matching,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Tree => write!(f, "tree"),
            Mode::Matching => write!(f, "matching"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree" => Ok(Mode::Tree),
            "matching" => Ok(Mode::Matching),
            other => Err(format!("unknown mode {other:?} (expected tree|matching)")),
        }
    }
}

/// Divisor of the encoder's neighborhood mean. The aggregation always runs
/// over N(u) plus u itself; [`MeanDivisor::SetSize`] divides by that set's
/// size, [`MeanDivisor::NeighborCount`] divides by |N(u)| only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanDivisor {
    SetSize,
    NeighborCount,
}

impl std::fmt::Display for MeanDivisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanDivisor::SetSize => write!(f, "set-size"),
            MeanDivisor::NeighborCount => write!(f, "neighbor-count"),
        }
    }
}

impl std::str::FromStr for MeanDivisor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set-size" => Ok(MeanDivisor::SetSize),
            "neighbor-count" => Ok(MeanDivisor::NeighborCount),
            other => Err(format!("unknown mean divisor {other:?}")),
        }
    }
}

/// Architecture hyperparameters. `gamma` weighs the residual path against
/// the aggregated neighborhood and is fixed, not learned. `score_scale` is
/// the fixed factor applied to attention scores before the softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub gamma: f64,
    pub score_scale: f64,
    pub mean_divisor: MeanDivisor,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 3,
            gamma: 0.5,
            score_scale: 10.0,
            mean_divisor: MeanDivisor::SetSize,
        }
    }
}

impl ModelConfig {
    pub fn with_dims(hidden: usize, layers: usize) -> Self {
        Self {
            hidden,
            layers,
            ..Self::default()
        }
    }

    /// The small configuration used throughout the test suite.
    pub fn test_small() -> Self {
        Self::with_dims(16, 1)
    }
}

const EDGE_FEATURES: usize = 5;
const LSTM_GATES: usize = 4;

/// All learnable tensors of the encoder/decoder.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub config: ModelConfig,
    pub vertex_w: Mat,
    pub vertex_b: Mat,
    pub theta: Vec<Mat>,
    pub agg_w: Vec<Mat>,
    pub agg_b: Vec<Mat>,
    pub edge_w: Mat,
    pub edge_b: Mat,
    pub lstm_wx: Vec<Mat>,
    pub lstm_wh: Vec<Mat>,
    pub lstm_b: Vec<Mat>,
    pub w_key: Mat,
    pub w_query: Mat,
    pub score_v: Mat,
    pub start: Mat,
}

impl PolicyParams {
    /// Random initialization: weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let d = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            Mat::from_vec(rows, cols, data)
        };
        Self {
            config,
            vertex_w: uniform(d, 2, 2),
            vertex_b: Mat::zeros(d, 1),
            theta: (0..config.layers).map(|_| uniform(d, d, d)).collect(),
            agg_w: (0..config.layers).map(|_| uniform(d, d, d)).collect(),
            agg_b: (0..config.layers).map(|_| Mat::zeros(d, 1)).collect(),
            edge_w: uniform(d, EDGE_FEATURES, EDGE_FEATURES),
            edge_b: Mat::zeros(d, 1),
            lstm_wx: (0..LSTM_GATES).map(|_| uniform(d, d, d)).collect(),
            lstm_wh: (0..LSTM_GATES).map(|_| uniform(d, d, d)).collect(),
            lstm_b: (0..LSTM_GATES).map(|_| Mat::zeros(d, 1)).collect(),
            w_key: uniform(d, d, d),
            w_query: uniform(d, d, d),
            score_v: uniform(1, d, d),
            start: uniform(d, 1, d),
        }
    }

    /// Visits every tensor in the canonical order used by [`flatten`],
    /// checkpoints, and gradient extraction.
    pub fn for_each_tensor(&self, mut f: impl FnMut(String, &Mat)) {
        f("vertex_w".into(), &self.vertex_w);
        f("vertex_b".into(), &self.vertex_b);
        for (l, m) in self.theta.iter().enumerate() {
            f(format!("theta.{l}"), m);
        }
        for (l, m) in self.agg_w.iter().enumerate() {
            f(format!("agg_w.{l}"), m);
        }
        for (l, m) in self.agg_b.iter().enumerate() {
            f(format!("agg_b.{l}"), m);
        }
        f("edge_w".into(), &self.edge_w);
        f("edge_b".into(), &self.edge_b);
        for (g, m) in self.lstm_wx.iter().enumerate() {
            f(format!("lstm_wx.{g}"), m);
        }
        for (g, m) in self.lstm_wh.iter().enumerate() {
            f(format!("lstm_wh.{g}"), m);
        }
        for (g, m) in self.lstm_b.iter().enumerate() {
            f(format!("lstm_b.{g}"), m);
        }
        f("w_key".into(), &self.w_key);
        f("w_query".into(), &self.w_query);
        f("score_v".into(), &self.score_v);
        f("start".into(), &self.start);
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v: Vec<&mut Mat> = vec![&mut self.vertex_w, &mut self.vertex_b];
        v.extend(self.theta.iter_mut());
        v.extend(self.agg_w.iter_mut());
        v.extend(self.agg_b.iter_mut());
        v.push(&mut self.edge_w);
        v.push(&mut self.edge_b);
        v.extend(self.lstm_wx.iter_mut());
        v.extend(self.lstm_wh.iter_mut());
        v.extend(self.lstm_b.iter_mut());
        v.push(&mut self.w_key);
        v.push(&mut self.w_query);
        v.push(&mut self.score_v);
        v.push(&mut self.start);
        v
    }

    pub fn num_params(&self) -> usize {
        let mut total = 0;
        self.for_each_tensor(|_, m| total += m.data.len());
        total
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_tensor(|_, m| out.extend_from_slice(&m.data));
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for m in self.tensors_mut() {
            let len = m.data.len();
            m.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, m| ok &= m.is_finite());
        ok
    }
}

/// A spanning tree over `n` vertices: n-1 edges, acyclic, connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    pub n: usize,
    pub edges: Vec<EdgeId>,
}

impl SpanningTree {
    pub fn try_new(n: usize, edges: Vec<EdgeId>) -> Result<Self, PolicyError> {
        if edges.len() != n - 1 {
            return Err(PolicyError::WrongEdgeCount {
                expected: n - 1,
                actual: edges.len(),
            });
        }
        let mut uf = UnionFind::new(n);
        for e in &edges {
            if e.v() >= n {
                return Err(PolicyError::VertexOutOfRange { vertex: e.v(), n });
            }
            if !uf.union(e.u(), e.v()) {
                return Err(PolicyError::CyclicEdges);
            }
        }
        if uf.components() != 1 {
            return Err(PolicyError::Disconnected);
        }
        Ok(Self { n, edges })
    }

    pub fn weight(&self, inst: &Instance) -> f64 {
        self.edges.iter().map(|e| inst.dist(e.u(), e.v())).sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.u()] += 1;
            deg[e.v()] += 1;
        }
        deg
    }
}

/// A perfect matching over an even-sized vertex subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub odd: Vec<usize>,
    pub edges: Vec<EdgeId>,
}

impl Matching {
    pub fn try_new(odd: Vec<usize>, edges: Vec<EdgeId>) -> Result<Self, PolicyError> {
        if odd.is_empty() || odd.len() % 2 != 0 {
            return Err(PolicyError::NotPerfectMatching(format!(
                "subset size {} is not even and positive",
                odd.len()
            )));
        }
        if !odd.windows(2).all(|w| w[0] < w[1]) {
            return Err(PolicyError::NotPerfectMatching(
                "subset must be sorted and duplicate-free".into(),
            ));
        }
        if edges.len() != odd.len() / 2 {
            return Err(PolicyError::NotPerfectMatching(format!(
                "expected {} edges, got {}",
                odd.len() / 2,
                edges.len()
            )));
        }
        let mut covered = std::collections::BTreeSet::new();
        for e in &edges {
            for v in [e.u(), e.v()] {
                if odd.binary_search(&v).is_err() {
                    return Err(PolicyError::NotPerfectMatching(format!(
                        "edge {e} leaves the subset"
                    )));
                }
                if !covered.insert(v) {
                    return Err(PolicyError::NotPerfectMatching(format!(
                        "vertex {v} covered twice"
                    )));
                }
            }
        }
        Ok(Self { odd, edges })
    }

    pub fn weight(&self, inst: &Instance) -> f64 {
        self.edges.iter().map(|e| inst.dist(e.u(), e.v())).sum()
    }
}

/// Record of one complete rollout: the chosen edges with per-step
/// log-probabilities, entropies, and rewards (negative edge weights).
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub mode: Mode,
    pub chosen: Vec<EdgeId>,
    pub step_logprob: Vec<f64>,
    pub step_entropy: Vec<f64>,
    pub step_reward: Vec<f64>,
    pub total_reward: f64,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    pub fn to_tree(&self, n: usize) -> Result<SpanningTree, PolicyError> {
        SpanningTree::try_new(n, self.chosen.clone())
    }

    pub fn to_matching(&self, odd: Vec<usize>) -> Result<Matching, PolicyError> {
        Matching::try_new(odd, self.chosen.clone())
    }
}

/// Sum and per-step mean of the conditional entropies of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyStats {
    pub sum: f64,
    pub mean: f64,
}

/// Approximates the sequence entropy by the per-step conditional entropies:
/// the sum is the regularizer, the length-normalized mean is the reported
/// loss term.
pub fn sequence_entropy(trace: &RolloutTrace) -> EntropyStats {
    let sum: f64 = trace.step_entropy.iter().sum();
    let mean = if trace.step_entropy.is_empty() {
        0.0
    } else {
        sum / trace.step_entropy.len() as f64
    };
    EntropyStats { sum, mean }
}

/// How the next edge is picked at each decode step.
pub enum ActionSource<'a> {
    /// Sample from the step distribution.
    Sample(&'a mut ChaCha8Rng),
    /// Argmax of the step distribution; ties go to the smallest canonical
    /// edge, so greedy decoding ignores randomness entirely.
    Greedy,
    /// Replay a fixed edge sequence (gradient evaluation, consistency checks).
    Forced(&'a [EdgeId]),
}

/// Canonical edge list of the complete graph induced by a sorted vertex
/// subset.
pub fn subset_edges(verts: &[usize]) -> Vec<EdgeId> {
    let mut edges = Vec::with_capacity(verts.len() * (verts.len().saturating_sub(1)) / 2);
    for i in 0..verts.len() {
        for j in (i + 1)..verts.len() {
            edges.push(EdgeId::new(verts[i], verts[j]));
        }
    }
    edges
}

/// Edge mask for tree construction: feasible edges are exactly those whose
/// endpoints lie in different components of the chosen forest. The mask is
/// aligned with [`crate::instance::all_edges`].
pub fn feasible_mask_tree(n: usize, chosen: &[EdgeId]) -> Vec<bool> {
    let mut uf = UnionFind::new(n);
    for e in chosen {
        uf.union(e.u(), e.v());
    }
    crate::instance::all_edges(n)
        .into_iter()
        .map(|e| !uf.same(e.u(), e.v()))
        .collect()
}

/// Edge mask for matching construction over subset `odd` (sorted): feasible
/// edges are those with both endpoints uncovered. Aligned with
/// [`subset_edges`] of `odd`.
pub fn feasible_mask_matching(odd: &[usize], chosen: &[EdgeId]) -> Vec<bool> {
    let covered: std::collections::BTreeSet<usize> = chosen
        .iter()
        .flat_map(|e| [e.u(), e.v()])
        .collect();
    subset_edges(odd)
        .into_iter()
        .map(|e| !covered.contains(&e.u()) && !covered.contains(&e.v()))
        .collect()
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Edge embeddings and supporting structure produced by the encoder.
#[derive(Debug)]
pub struct EncodeOut {
    /// Sorted vertex labels the policy operates on.
    pub verts: Vec<usize>,
    /// Canonical edges of the induced complete graph.
    pub edges: Vec<EdgeId>,
    /// Final vertex embeddings, hidden x |verts|.
    pub x_final: VarId,
    /// Edge embeddings z, hidden x |edges|.
    pub z: VarId,
    /// Key projection W_key z, stored transposed (|edges| x hidden) so
    /// per-edge scoring reads contiguous rows.
    pub kt: VarId,
}

/// Runs the message-passing encoder on the complete graph induced by
/// `verts` and returns per-edge embeddings.
pub fn encode<E: Engine>(
    engine: &mut E,
    vars: &ParamVars,
    params: &PolicyParams,
    inst: &Instance,
    verts: &[usize],
) -> Result<EncodeOut, PolicyError> {
    let m = verts.len();
    let cfg = params.config;

    let mut coord_data = Vec::with_capacity(2 * m);
    for row in 0..2 {
        for &v in verts {
            coord_data.push(inst.coord(v)[row]);
        }
    }
    let coords = engine.leaf(Mat::from_vec(2, m, coord_data));

    let lin = engine.matmul(vars.vertex_w, coords);
    let mut x = engine.add_col(lin, vars.vertex_b);
    for l in 0..cfg.layers {
        let mut mean = engine.mean_cols(x);
        if cfg.mean_divisor == MeanDivisor::NeighborCount && m > 1 {
            // aggregate over N(u) + u but divide by |N(u)| only
            mean = engine.scale(mean, m as f64 / (m as f64 - 1.0));
        }
        let agg_lin = engine.matmul(vars.agg_w[l], mean);
        let agg_aff = engine.add_col(agg_lin, vars.agg_b[l]);
        let phi = engine.relu(agg_aff);
        let residual = engine.matmul(vars.theta[l], x);
        let residual = engine.scale(residual, cfg.gamma);
        let spread = engine.broadcast_col(phi, m);
        let spread = engine.scale(spread, 1.0 - cfg.gamma);
        x = engine.add(residual, spread);
        if !engine.val(x).is_finite() {
            return Err(PolicyError::NonFinite {
                stage: format!("encoder layer {l}"),
            });
        }
    }

    let edges = subset_edges(verts);
    // Edge features: weight plus both endpoint coordinates, endpoints ordered
    // by coordinate (lexicographic, ties by label) so the features do not
    // depend on the vertex labeling.
    let mut feat = Mat::zeros(EDGE_FEATURES, edges.len());
    let mut pairs = Vec::with_capacity(edges.len());
    let pos_of = |label: usize| verts.binary_search(&label).expect("vertex in subset");
    for (i, e) in edges.iter().enumerate() {
        let (u, v) = e.endpoints();
        let (cu, cv) = (inst.coord(u), inst.coord(v));
        let (a, b) = if (cu[0], cu[1], u) <= (cv[0], cv[1], v) {
            (cu, cv)
        } else {
            (cv, cu)
        };
        feat.set(0, i, inst.dist(u, v));
        feat.set(1, i, a[0]);
        feat.set(2, i, a[1]);
        feat.set(3, i, b[0]);
        feat.set(4, i, b[1]);
        pairs.push((pos_of(u), pos_of(v)));
    }
    let feat = engine.leaf(feat);
    let eta_lin = engine.matmul(vars.edge_w, feat);
    let eta = engine.add_col(eta_lin, vars.edge_b);
    let z = engine.edge_endpoint_sum(x, eta, &pairs);
    let k = engine.matmul(vars.w_key, z);
    let kt = engine.transpose(k);
    if !engine.val(z).is_finite() || !engine.val(kt).is_finite() {
        return Err(PolicyError::NonFinite {
            stage: "edge embeddings".into(),
        });
    }
    Ok(EncodeOut {
        verts: verts.to_vec(),
        edges,
        x_final: x,
        z,
        kt,
    })
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Engine-resident handles for every parameter tensor, registered in the
/// same canonical order as [`PolicyParams::for_each_tensor`].
pub struct ParamVars {
    pub ordered: Vec<VarId>,
    pub vertex_w: VarId,
    pub vertex_b: VarId,
    pub theta: Vec<VarId>,
    pub agg_w: Vec<VarId>,
    pub agg_b: Vec<VarId>,
    pub edge_w: VarId,
    pub edge_b: VarId,
    pub lstm_wx: Vec<VarId>,
    pub lstm_wh: Vec<VarId>,
    pub lstm_b: Vec<VarId>,
    pub w_key: VarId,
    pub w_query: VarId,
    pub score_v: VarId,
    pub start: VarId,
}

impl ParamVars {
    pub fn register<E: Engine>(engine: &mut E, params: &PolicyParams) -> Self {
        let l = params.config.layers;
        let mut ordered = Vec::new();
        params.for_each_tensor(|_, m| ordered.push(engine.leaf(m.clone())));
        let mut it = ordered.iter().copied();
        let mut take = |count: usize| -> Vec<VarId> { it.by_ref().take(count).collect() };
        let vertex = take(2);
        let theta = take(l);
        let agg_w = take(l);
        let agg_b = take(l);
        let edge = take(2);
        let lstm_wx = take(LSTM_GATES);
        let lstm_wh = take(LSTM_GATES);
        let lstm_b = take(LSTM_GATES);
        let tail = take(4);
        debug_assert!(it.next().is_none());
        Self {
            ordered,
            vertex_w: vertex[0],
            vertex_b: vertex[1],
            theta,
            agg_w,
            agg_b,
            edge_w: edge[0],
            edge_b: edge[1],
            lstm_wx,
            lstm_wh,
            lstm_b,
            w_key: tail[0],
            w_query: tail[1],
            score_v: tail[2],
            start: tail[3],
        }
    }
}

enum MaskState {
    Tree(UnionFind),
    Matching { covered: Vec<bool> },
}

/// Outcome of one decode step. `feasible` holds positions into the decoder's
/// edge list and `probs` is the distribution over those positions; all other
/// edges have probability exactly zero.
pub struct StepOutcome {
    pub edge: EdgeId,
    pub edge_pos: usize,
    pub feasible: Vec<usize>,
    pub probs: Vec<f64>,
    pub logp: f64,
    pub entropy: f64,
    pub reward: f64,
}

impl StepOutcome {
    /// Dense probability table over the decoder's full edge list; infeasible
    /// edges carry exactly 0.
    pub fn full_probabilities(&self, edge_count: usize) -> Vec<f64> {
        let mut full = vec![0.0; edge_count];
        for (&pos, &p) in self.feasible.iter().zip(&self.probs) {
            full[pos] = p;
        }
        full
    }
}

/// Step-by-step decoder. Generic over the engine: recording backends keep
/// the whole computation for backpropagation, the value-only backend frees
/// per-step temporaries as it goes.
pub struct Decoder<'a, E: Engine> {
    engine: E,
    vars: ParamVars,
    cfg: ModelConfig,
    inst: &'a Instance,
    mode: Mode,
    ctx: EncodeOut,
    mask: MaskState,
    h: VarId,
    c: VarId,
    pending_input: VarId,
    steps_done: usize,
    total_steps: usize,
    stats_ids: Vec<VarId>,
}

impl<'a, E: Engine> Decoder<'a, E> {
    pub fn new(
        mut engine: E,
        params: &PolicyParams,
        inst: &'a Instance,
        mode: Mode,
        subset: Option<&[usize]>,
    ) -> Result<Self, PolicyError> {
        let verts: Vec<usize> = match (mode, subset) {
            (Mode::Tree, None) => (0..inst.n()).collect(),
            (Mode::Tree, Some(_)) => {
                return Err(PolicyError::InvalidSubset(
                    "tree mode operates on the full vertex set".into(),
                ))
            }
            (Mode::Matching, Some(s)) => {
                if s.len() < 2 || s.len() % 2 != 0 {
                    return Err(PolicyError::InvalidSubset(format!("size {}", s.len())));
                }
                if !s.windows(2).all(|w| w[0] < w[1]) {
                    return Err(PolicyError::InvalidSubset("must be sorted, unique".into()));
                }
                if let Some(&v) = s.iter().find(|&&v| v >= inst.n()) {
                    return Err(PolicyError::VertexOutOfRange { vertex: v, n: inst.n() });
                }
                s.to_vec()
            }
            (Mode::Matching, None) => {
                return Err(PolicyError::InvalidSubset(
                    "matching mode requires a vertex subset".into(),
                ))
            }
        };
        let vars = ParamVars::register(&mut engine, params);
        let ctx = encode(&mut engine, &vars, params, inst, &verts)?;
        let d = params.config.hidden;
        let h = engine.leaf(Mat::zeros(d, 1));
        let c = engine.leaf(Mat::zeros(d, 1));
        let pending_input = vars.start;
        let m = verts.len();
        let (mask, total_steps) = match mode {
            Mode::Tree => (MaskState::Tree(UnionFind::new(m)), m - 1),
            Mode::Matching => (
                MaskState::Matching {
                    covered: vec![false; m],
                },
                m / 2,
            ),
        };
        Ok(Self {
            engine,
            vars,
            cfg: params.config,
            inst,
            mode,
            ctx,
            mask,
            h,
            c,
            pending_input,
            steps_done: 0,
            total_steps,
            stats_ids: Vec::new(),
        })
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.ctx.edges
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn remaining_steps(&self) -> usize {
        self.total_steps - self.steps_done
    }

    /// Positions (into [`Decoder::edges`]) of the currently feasible edges.
    pub fn feasible(&mut self) -> Vec<usize> {
        let verts = &self.ctx.verts;
        match &mut self.mask {
            MaskState::Tree(uf) => {
                let mut out = Vec::new();
                let mut pos = 0;
                for i in 0..verts.len() {
                    for j in (i + 1)..verts.len() {
                        if !uf.same(i, j) {
                            out.push(pos);
                        }
                        pos += 1;
                    }
                }
                out
            }
            MaskState::Matching { covered } => {
                let mut out = Vec::new();
                let mut pos = 0;
                for i in 0..verts.len() {
                    for j in (i + 1)..verts.len() {
                        if !covered[i] && !covered[j] {
                            out.push(pos);
                        }
                        pos += 1;
                    }
                }
                out
            }
        }
    }

    fn lstm_advance(&mut self, input: VarId) -> (VarId, VarId) {
        let e = &mut self.engine;
        let gate = |e: &mut E, wx: VarId, wh: VarId, b: VarId, x: VarId, h: VarId| {
            let a = e.matmul(wx, x);
            let bh = e.matmul(wh, h);
            e.add_n(&[a, bh, b])
        };
        let pre_i = gate(e, self.vars.lstm_wx[0], self.vars.lstm_wh[0], self.vars.lstm_b[0], input, self.h);
        let pre_f = gate(e, self.vars.lstm_wx[1], self.vars.lstm_wh[1], self.vars.lstm_b[1], input, self.h);
        let pre_o = gate(e, self.vars.lstm_wx[2], self.vars.lstm_wh[2], self.vars.lstm_b[2], input, self.h);
        let pre_g = gate(e, self.vars.lstm_wx[3], self.vars.lstm_wh[3], self.vars.lstm_b[3], input, self.h);
        let i = e.sigmoid(pre_i);
        let f = e.sigmoid(pre_f);
        let o = e.sigmoid(pre_o);
        let g = e.tanh(pre_g);
        let fc = e.hadamard(f, self.c);
        let ig = e.hadamard(i, g);
        let c_new = e.add(fc, ig);
        let c_act = e.tanh(c_new);
        let h_new = e.hadamard(o, c_act);
        (h_new, c_new)
    }

    /// Runs one decode step: advances the recurrent state with the previous
    /// choice, scores the feasible edges, and commits the action chosen by
    /// `source`.
    pub fn step(&mut self, source: &mut ActionSource<'_>) -> Result<StepOutcome, PolicyError> {
        let step = self.steps_done;
        assert!(step < self.total_steps, "rollout already complete");
        let feasible = self.feasible();
        if feasible.is_empty() {
            return Err(PolicyError::NoFeasibleAction { step });
        }
        let mark = self.engine.mark();

        let (h_new, c_new) = self.lstm_advance(self.pending_input);
        self.h = h_new;
        self.c = c_new;

        let query = self.engine.matmul(self.vars.w_query, self.h);
        let scores = self.engine.attention_scores(
            self.ctx.kt,
            query,
            self.vars.score_v,
            &feasible,
            self.cfg.score_scale,
        );
        if !self.engine.val(scores).is_finite() {
            return Err(PolicyError::NonFinite {
                stage: format!("decoder step {step}"),
            });
        }

        let probs = crate::tape::softmax_probs(self.engine.val(scores));
        let pos_in_feasible = match source {
            ActionSource::Sample(rng) => sample_index(&probs, rng),
            ActionSource::Greedy => argmax(&probs),
            ActionSource::Forced(seq) => {
                let forced = *seq.get(step).ok_or(PolicyError::ForcedExhausted { step })?;
                let global = self
                    .ctx
                    .edges
                    .iter()
                    .position(|e| *e == forced)
                    .ok_or(PolicyError::ForcedInfeasible { edge: forced, step })?;
                feasible
                    .iter()
                    .position(|&p| p == global)
                    .ok_or(PolicyError::ForcedInfeasible { edge: forced, step })?
            }
        };
        let (_, stats) = self.engine.softmax_stats(scores, Some(pos_in_feasible));
        let logp = self.engine.val(stats).get(0, 0);
        let entropy = self.engine.val(stats).get(1, 0);
        self.stats_ids.push(stats);

        let edge_pos = feasible[pos_in_feasible];
        let edge = self.ctx.edges[edge_pos];
        let reward = -self.inst.dist(edge.u(), edge.v());

        self.pending_input = self.engine.col(self.ctx.z, edge_pos);
        let verts = &self.ctx.verts;
        match &mut self.mask {
            MaskState::Tree(uf) => {
                let iu = verts.binary_search(&edge.u()).unwrap();
                let iv = verts.binary_search(&edge.v()).unwrap();
                uf.union(iu, iv);
            }
            MaskState::Matching { covered } => {
                covered[verts.binary_search(&edge.u()).unwrap()] = true;
                covered[verts.binary_search(&edge.v()).unwrap()] = true;
            }
        }
        self.steps_done += 1;

        let Self { engine, h, c, pending_input, stats_ids, .. } = self;
        let stats_ref = stats_ids.last_mut().expect("just pushed");
        engine.release(mark, &mut [h, c, pending_input, stats_ref]);

        Ok(StepOutcome {
            edge,
            edge_pos,
            feasible,
            probs,
            logp,
            entropy,
            reward,
        })
    }

    /// Consumes the decoder, returning the engine and the per-step stats
    /// nodes ([log p(chosen); entropy] each) for loss assembly.
    pub fn finish(self) -> (E, Vec<VarId>, Vec<VarId>) {
        (self.engine, self.stats_ids, self.vars.ordered)
    }
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Runs a complete rollout without gradient bookkeeping.
pub fn rollout(
    params: &PolicyParams,
    inst: &Instance,
    mode: Mode,
    subset: Option<&[usize]>,
    mut source: ActionSource<'_>,
) -> Result<RolloutTrace, PolicyError> {
    let mut dec = Decoder::new(Eval::new(), params, inst, mode, subset)?;
    run_rollout(&mut dec, &mut source)
}

/// A recorded rollout: the tape plus handles for loss assembly.
pub struct Recorded {
    pub tape: Tape,
    /// Per-step 2 x 1 nodes holding [log p(chosen); entropy].
    pub stats_ids: Vec<VarId>,
    /// Parameter leaves in canonical tensor order.
    pub param_ids: Vec<VarId>,
}

impl Recorded {
    /// Flattens parameter gradients in canonical tensor order; tensors the
    /// loss never touched contribute zeros.
    pub fn param_gradient(&self, grads: &Grads, params: &PolicyParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.num_params());
        let mut idx = 0;
        params.for_each_tensor(|_, m| {
            match grads.get(self.param_ids[idx]) {
                Some(g) => out.extend_from_slice(&g.data),
                None => out.extend(std::iter::repeat(0.0).take(m.data.len())),
            }
            idx += 1;
        });
        out
    }
}

/// Runs a complete rollout on a recording engine, returning the trace and
/// the tape for gradient computation.
pub fn rollout_recorded(
    params: &PolicyParams,
    inst: &Instance,
    mode: Mode,
    subset: Option<&[usize]>,
    mut source: ActionSource<'_>,
) -> Result<(RolloutTrace, Recorded), PolicyError> {
    let mut dec = Decoder::new(Tape::new(), params, inst, mode, subset)?;
    let trace = run_rollout(&mut dec, &mut source)?;
    let (tape, stats_ids, param_ids) = dec.finish();
    Ok((
        trace,
        Recorded {
            tape,
            stats_ids,
            param_ids,
        },
    ))
}

fn run_rollout<E: Engine>(
    dec: &mut Decoder<'_, E>,
    source: &mut ActionSource<'_>,
) -> Result<RolloutTrace, PolicyError> {
    let steps = dec.remaining_steps();
    let mut chosen = Vec::with_capacity(steps);
    let mut logps = Vec::with_capacity(steps);
    let mut ents = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    for _ in 0..steps {
        let out = dec.step(source)?;
        chosen.push(out.edge);
        logps.push(out.logp);
        ents.push(out.entropy);
        rewards.push(out.reward);
    }
    let total_reward = rewards.iter().sum();
    Ok(RolloutTrace {
        mode: dec.mode(),
        chosen,
        step_logprob: logps,
        step_entropy: ents,
        step_reward: rewards,
        total_reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{all_edges, random_instance};
    use crate::tape::Eval;

    fn inst(n: usize, seed: u64) -> Instance {
        random_instance(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn params(hidden: usize, layers: usize, seed: u64) -> PolicyParams {
        PolicyParams::init(ModelConfig::with_dims(hidden, layers), seed)
    }

    // -- independent scalar math for the recomputation oracles --------------

    fn mv(w: &Mat, x: &[f64]) -> Vec<f64> {
        (0..w.rows)
            .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn vscale(a: &[f64], k: f64) -> Vec<f64> {
        a.iter().map(|x| x * k).collect()
    }

    fn vtanh(a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| x.tanh()).collect()
    }

    fn vsig(a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
    }

    fn vmul(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    fn vrelu(a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| x.max(0.0)).collect()
    }

    /// Independent forward pass of the encoder for the oracle tests.
    fn manual_encode(p: &PolicyParams, inst: &Instance, verts: &[usize]) -> Vec<Vec<f64>> {
        let m = verts.len();
        let mut cols: Vec<Vec<f64>> = verts
            .iter()
            .map(|&v| {
                let c = inst.coord(v);
                vadd(&mv(&p.vertex_w, &[c[0], c[1]]), &p.vertex_b.data)
            })
            .collect();
        for l in 0..p.config.layers {
            let mut mean = vec![0.0; p.config.hidden];
            for col in &cols {
                mean = vadd(&mean, col);
            }
            let divisor = match p.config.mean_divisor {
                MeanDivisor::SetSize => m as f64,
                MeanDivisor::NeighborCount => (m - 1) as f64,
            };
            mean = vscale(&mean, 1.0 / divisor);
            let phi = vrelu(&vadd(&mv(&p.agg_w[l], &mean), &p.agg_b[l].data));
            cols = cols
                .iter()
                .map(|c| {
                    vadd(
                        &vscale(&mv(&p.theta[l], c), p.config.gamma),
                        &vscale(&phi, 1.0 - p.config.gamma),
                    )
                })
                .collect();
        }
        cols
    }

    fn manual_edge_embeddings(
        p: &PolicyParams,
        inst: &Instance,
        verts: &[usize],
        x: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        subset_edges(verts)
            .iter()
            .map(|e| {
                let (u, v) = e.endpoints();
                let (cu, cv) = (inst.coord(u), inst.coord(v));
                let (a, b) = if (cu[0], cu[1], u) <= (cv[0], cv[1], v) {
                    (cu, cv)
                } else {
                    (cv, cu)
                };
                let f = [inst.dist(u, v), a[0], a[1], b[0], b[1]];
                let eta = vadd(&mv(&p.edge_w, &f), &p.edge_b.data);
                let iu = verts.iter().position(|&w| w == u).unwrap();
                let iv = verts.iter().position(|&w| w == v).unwrap();
                vadd(&vadd(&eta, &x[iu]), &x[iv])
            })
            .collect()
    }

    fn manual_lstm(
        p: &PolicyParams,
        input: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let gate = |g: usize| {
            vadd(
                &vadd(&mv(&p.lstm_wx[g], input), &mv(&p.lstm_wh[g], h)),
                &p.lstm_b[g].data,
            )
        };
        let i = vsig(&gate(0));
        let f = vsig(&gate(1));
        let o = vsig(&gate(2));
        let g = vtanh(&gate(3));
        let c_new = vadd(&vmul(&f, c), &vmul(&i, &g));
        let h_new = vmul(&o, &vtanh(&c_new));
        (h_new, c_new)
    }

    // -- encoder -------------------------------------------------------------

    #[test]
    fn encode_residual_only_path_is_identity() {
        let mut cfg = ModelConfig::with_dims(6, 3);
        cfg.gamma = 1.0;
        let mut p = PolicyParams::init(cfg, 5);
        for theta in &mut p.theta {
            *theta = Mat::zeros(6, 6);
            for i in 0..6 {
                theta.set(i, i, 1.0);
            }
        }
        let inst = inst(5, 1);
        let verts: Vec<usize> = (0..5).collect();
        let mut e = Eval::new();
        let vars = ParamVars::register(&mut e, &p);
        let ctx = encode(&mut e, &vars, &p, &inst, &verts).unwrap();
        // with gamma = 1 and identity residual maps, x^L is the initial
        // affine embedding
        for (j, &v) in verts.iter().enumerate() {
            let c = inst.coord(v);
            let expect = vadd(&mv(&p.vertex_w, &[c[0], c[1]]), &p.vertex_b.data);
            for r in 0..6 {
                assert!((e.val(ctx.x_final).get(r, j) - expect[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_matches_scalar_recomputation() {
        let p = params(5, 1, 7);
        let inst = inst(3, 2);
        let verts: Vec<usize> = (0..3).collect();
        let mut e = Eval::new();
        let vars = ParamVars::register(&mut e, &p);
        let ctx = encode(&mut e, &vars, &p, &inst, &verts).unwrap();
        let x = manual_encode(&p, &inst, &verts);
        let z = manual_edge_embeddings(&p, &inst, &verts, &x);
        for (col, ze) in z.iter().enumerate() {
            for r in 0..5 {
                assert!(
                    (e.val(ctx.z).get(r, col) - ze[r]).abs() < 1e-12,
                    "z[{r},{col}] mismatch"
                );
            }
        }
    }

    #[test]
    fn encode_invariant_under_relabeling() {
        let p = params(6, 2, 11);
        let base = inst(7, 3);
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let permuted = Instance::new(
            "perm",
            perm.iter().map(|&v| base.coord(v)).collect(),
            None,
        )
        .unwrap();

        let collect_sorted = |inst: &Instance| -> Vec<Vec<f64>> {
            let verts: Vec<usize> = (0..inst.n()).collect();
            let mut e = Eval::new();
            let vars = ParamVars::register(&mut e, &p);
            let ctx = encode(&mut e, &vars, &p, inst, &verts).unwrap();
            let z = e.val(ctx.z);
            let mut cols: Vec<Vec<f64>> = (0..z.cols)
                .map(|c| (0..z.rows).map(|r| z.get(r, c)).collect())
                .collect();
            cols.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cols
        };

        let za = collect_sorted(&base);
        let zb = collect_sorted(&permuted);
        for (a, b) in za.iter().zip(&zb) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "embedding multiset differs");
            }
        }
    }

    #[test]
    fn encode_rejects_non_finite() {
        let mut p = params(4, 1, 0);
        p.vertex_w.set(0, 0, f64::NAN);
        let inst = inst(4, 4);
        let verts: Vec<usize> = (0..4).collect();
        let mut e = Eval::new();
        let vars = ParamVars::register(&mut e, &p);
        match encode(&mut e, &vars, &p, &inst, &verts) {
            Err(PolicyError::NonFinite { stage }) => assert!(stage.contains("layer 0")),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    // -- decoder -------------------------------------------------------------

    #[test]
    fn decode_uniform_when_projections_are_zero() {
        let mut p = params(6, 1, 9);
        p.w_key = Mat::zeros(6, 6);
        p.w_query = Mat::zeros(6, 6);
        let inst = inst(4, 5);
        let mut dec = Decoder::new(Eval::new(), &p, &inst, Mode::Tree, None).unwrap();
        let out = dec.step(&mut ActionSource::Greedy).unwrap();
        assert_eq!(out.feasible.len(), 6);
        for pr in &out.probs {
            assert_eq!(*pr, 1.0 / 6.0);
        }
        let full = out.full_probabilities(dec.edges().len());
        assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // greedy tie-break lands on the smallest canonical edge
        assert_eq!(out.edge, EdgeId::new(0, 1));
    }

    #[test]
    fn decode_single_feasible_edge_is_forced() {
        let p = params(6, 1, 10);
        let inst = inst(5, 6);
        let trace = rollout(
            &p,
            &inst,
            Mode::Matching,
            Some(&[1, 3]),
            ActionSource::Greedy,
        )
        .unwrap();
        assert_eq!(trace.chosen, vec![EdgeId::new(1, 3)]);
        assert_eq!(trace.step_logprob, vec![0.0]);
        assert_eq!(trace.step_entropy, vec![0.0]);
        assert_eq!(trace.total_reward, -inst.dist(1, 3));
    }

    #[test]
    fn decode_matches_manual_recomputation() {
        let p = params(6, 2, 13);
        let inst = inst(4, 7);
        let verts: Vec<usize> = (0..4).collect();
        let forced = [EdgeId::new(0, 1), EdgeId::new(2, 3), EdgeId::new(0, 2)];
        let mut dec = Decoder::new(Eval::new(), &p, &inst, Mode::Tree, None).unwrap();
        let mut outcomes = Vec::new();
        let mut src = ActionSource::Forced(&forced);
        for _ in 0..3 {
            outcomes.push(dec.step(&mut src).unwrap());
        }

        // independent recomputation
        let x = manual_encode(&p, &inst, &verts);
        let z = manual_edge_embeddings(&p, &inst, &verts, &x);
        let k: Vec<Vec<f64>> = z.iter().map(|ze| mv(&p.w_key, ze)).collect();
        let edges = subset_edges(&verts);
        let mut h = vec![0.0; 6];
        let mut c = vec![0.0; 6];
        let mut input = p.start.data.clone();
        let mut chosen_sets: Vec<EdgeId> = Vec::new();
        for (t, out) in outcomes.iter().enumerate() {
            let (h2, c2) = manual_lstm(&p, &input, &h, &c);
            h = h2;
            c = c2;
            let q = mv(&p.w_query, &h);
            let mask = feasible_mask_tree(4, &chosen_sets);
            let feasible: Vec<usize> =
                (0..edges.len()).filter(|&i| mask[i]).collect();
            assert_eq!(feasible, out.feasible, "step {t} feasible set");
            let scores: Vec<f64> = feasible
                .iter()
                .map(|&i| {
                    let u = vtanh(&vadd(&k[i], &q));
                    p.config.score_scale
                        * p.score_v.data.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (want, got) in exps.iter().map(|e| e / total).zip(&out.probs) {
                assert!((want - got).abs() < 1e-12, "step {t} probability mismatch");
            }
            chosen_sets.push(forced[t]);
            input = z[edges.iter().position(|e| *e == forced[t]).unwrap()].clone();
        }
    }

    #[test]
    fn decoder_rejects_bad_subsets_and_forced_edges() {
        let p = params(4, 1, 1);
        let i6 = inst(6, 8);
        assert!(matches!(
            rollout(&p, &i6, Mode::Matching, Some(&[0, 1, 2]), ActionSource::Greedy),
            Err(PolicyError::InvalidSubset(_))
        ));
        assert!(matches!(
            rollout(&p, &i6, Mode::Matching, None, ActionSource::Greedy),
            Err(PolicyError::InvalidSubset(_))
        ));
        assert!(matches!(
            rollout(&p, &i6, Mode::Tree, Some(&[0, 1]), ActionSource::Greedy),
            Err(PolicyError::InvalidSubset(_))
        ));
        assert!(matches!(
            rollout(&p, &i6, Mode::Matching, Some(&[0, 9]), ActionSource::Greedy),
            Err(PolicyError::VertexOutOfRange { .. })
        ));
        // forcing an edge that closes a cycle
        let forced = [EdgeId::new(0, 1), EdgeId::new(1, 2), EdgeId::new(0, 2)];
        assert!(matches!(
            rollout(&p, &i6, Mode::Tree, None, ActionSource::Forced(&forced)),
            Err(PolicyError::ForcedInfeasible { step: 2, .. })
        ));
        let short = [EdgeId::new(0, 1)];
        assert!(matches!(
            rollout(&p, &i6, Mode::Tree, None, ActionSource::Forced(&short)),
            Err(PolicyError::ForcedExhausted { step: 1 })
        ));
    }

    // -- masks ---------------------------------------------------------------

    #[test]
    fn tree_mask_examples() {
        assert_eq!(feasible_mask_tree(4, &[]), vec![true; 6]);
        let chosen = [EdgeId::new(0, 1), EdgeId::new(1, 2)];
        let mask = feasible_mask_tree(4, &chosen);
        let edges = all_edges(4);
        let feasible: Vec<EdgeId> = edges
            .iter()
            .zip(&mask)
            .filter_map(|(e, &ok)| ok.then_some(*e))
            .collect();
        assert_eq!(
            feasible,
            vec![EdgeId::new(0, 3), EdgeId::new(1, 3), EdgeId::new(2, 3)]
        );
        let spanning = [EdgeId::new(0, 1), EdgeId::new(1, 2), EdgeId::new(2, 3)];
        assert!(feasible_mask_tree(4, &spanning).iter().all(|&ok| !ok));
    }

    #[test]
    fn matching_mask_examples() {
        let odd = [0usize, 1, 2, 3];
        assert_eq!(
            feasible_mask_matching(&odd, &[]).iter().filter(|&&x| x).count(),
            6
        );
        let mask = feasible_mask_matching(&odd, &[EdgeId::new(0, 2)]);
        let feasible: Vec<EdgeId> = subset_edges(&odd)
            .iter()
            .zip(&mask)
            .filter_map(|(e, &ok)| ok.then_some(*e))
            .collect();
        assert_eq!(feasible, vec![EdgeId::new(1, 3)]);
        assert_eq!(feasible_mask_matching(&[4, 9], &[]), vec![true]);
    }

    // -- rollouts ------------------------------------------------------------

    #[test]
    fn sampled_rollouts_build_valid_structures() {
        for trial in 0..200u64 {
            let n = 3 + (trial % 9) as usize;
            let p = params(8, 1, trial);
            let i = inst(n, trial ^ 0xABCD);
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let trace = rollout(&p, &i, Mode::Tree, None, ActionSource::Sample(&mut rng)).unwrap();
            let tree = trace.to_tree(n).expect("valid spanning tree");
            assert_eq!(trace.total_reward, -tree.weight(&i));

            let m = n - n % 2;
            let subset: Vec<usize> = (0..m).collect();
            let trace = rollout(
                &p,
                &i,
                Mode::Matching,
                Some(&subset),
                ActionSource::Sample(&mut rng),
            )
            .unwrap();
            trace.to_matching(subset).expect("valid perfect matching");
        }
    }

    #[test]
    fn greedy_rollout_ignores_rng_state() {
        let p = params(8, 2, 21);
        let i = inst(9, 9);
        let a = rollout(&p, &i, Mode::Tree, None, ActionSource::Greedy).unwrap();
        let b = rollout(&p, &i, Mode::Tree, None, ActionSource::Greedy).unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.step_logprob, b.step_logprob);
        assert_eq!(a.total_reward, b.total_reward);
    }

    #[test]
    fn forced_replay_reproduces_log_probabilities() {
        let p = params(8, 2, 22);
        let i = inst(8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sampled = rollout(&p, &i, Mode::Tree, None, ActionSource::Sample(&mut rng)).unwrap();
        let replay = rollout(
            &p,
            &i,
            Mode::Tree,
            None,
            ActionSource::Forced(&sampled.chosen),
        )
        .unwrap();
        assert_eq!(replay.chosen, sampled.chosen);
        let log_sum: f64 = sampled.step_logprob.iter().sum();
        let prob_product: f64 = replay.step_logprob.iter().map(|lp| lp.exp()).product();
        let rel = (log_sum.exp() - prob_product).abs() / prob_product.abs().max(1e-300);
        assert!(rel < 1e-6);
    }

    #[test]
    fn step_entropy_bounded_by_feasible_count() {
        let p = params(8, 1, 23);
        let i = inst(10, 11);
        let mut dec = Decoder::new(Eval::new(), &p, &i, Mode::Tree, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut src = ActionSource::Sample(&mut rng);
        for _ in 0..9 {
            let out = dec.step(&mut src).unwrap();
            assert!(out.entropy >= 0.0);
            assert!(out.entropy <= (out.feasible.len() as f64).ln() + 1e-12);
            assert!(out.logp <= 0.0);
        }
    }

    #[test]
    fn relabeling_with_matching_choices_preserves_reward() {
        let p = params(6, 1, 24);
        let base = inst(7, 12);
        let perm: Vec<usize> = vec![2, 5, 0, 6, 1, 4, 3]; // new label i holds old vertex perm[i]
        let permuted = Instance::new(
            "perm",
            perm.iter().map(|&v| base.coord(v)).collect(),
            None,
        )
        .unwrap();
        let mut inverse = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trace = rollout(&p, &base, Mode::Tree, None, ActionSource::Sample(&mut rng)).unwrap();
        let mapped: Vec<EdgeId> = trace
            .chosen
            .iter()
            .map(|e| EdgeId::new(inverse[e.u()], inverse[e.v()]))
            .collect();
        let replay = rollout(
            &p,
            &permuted,
            Mode::Tree,
            None,
            ActionSource::Forced(&mapped),
        )
        .unwrap();
        assert!((replay.total_reward - trace.total_reward).abs() < 1e-9);
    }

    // -- entropy accounting ---------------------------------------------------

    #[test]
    fn sequence_entropy_examples() {
        let uniform6 = RolloutTrace {
            mode: Mode::Tree,
            chosen: vec![EdgeId::new(0, 1); 3],
            step_logprob: vec![-(6.0f64.ln()); 3],
            step_entropy: vec![6.0f64.ln(); 3],
            step_reward: vec![-1.0; 3],
            total_reward: -3.0,
        };
        let stats = sequence_entropy(&uniform6);
        assert!((stats.sum - 3.0 * 6.0f64.ln()).abs() < 1e-12);
        assert!((stats.mean - 6.0f64.ln()).abs() < 1e-12);

        let deterministic = RolloutTrace {
            mode: Mode::Tree,
            chosen: vec![EdgeId::new(0, 1); 2],
            step_logprob: vec![0.0; 2],
            step_entropy: vec![0.0; 2],
            step_reward: vec![-1.0; 2],
            total_reward: -2.0,
        };
        assert_eq!(sequence_entropy(&deterministic).sum, 0.0);

        let two_step = RolloutTrace {
            mode: Mode::Tree,
            chosen: vec![EdgeId::new(0, 1); 2],
            step_logprob: vec![(0.5f64).ln(), 0.0],
            step_entropy: vec![2.0f64.ln(), 0.0],
            step_reward: vec![-1.0; 2],
            total_reward: -2.0,
        };
        assert!((sequence_entropy(&two_step).sum - 2.0f64.ln()).abs() < 1e-12);
    }

    // -- structures -----------------------------------------------------------

    #[test]
    fn spanning_tree_validation() {
        assert!(SpanningTree::try_new(
            4,
            vec![EdgeId::new(0, 1), EdgeId::new(1, 2), EdgeId::new(2, 3)]
        )
        .is_ok());
        assert!(matches!(
            SpanningTree::try_new(4, vec![EdgeId::new(0, 1)]),
            Err(PolicyError::WrongEdgeCount { .. })
        ));
        assert!(matches!(
            SpanningTree::try_new(
                4,
                vec![EdgeId::new(0, 1), EdgeId::new(1, 2), EdgeId::new(0, 2)]
            ),
            Err(PolicyError::CyclicEdges)
        ));
    }

    #[test]
    fn matching_validation() {
        assert!(Matching::try_new(vec![0, 1, 2, 3], vec![EdgeId::new(0, 2), EdgeId::new(1, 3)])
            .is_ok());
        assert!(Matching::try_new(vec![0, 1, 2], vec![EdgeId::new(0, 1)]).is_err());
        assert!(Matching::try_new(
            vec![0, 1, 2, 3],
            vec![EdgeId::new(0, 2), EdgeId::new(0, 3)]
        )
        .is_err());
        assert!(Matching::try_new(
            vec![0, 1, 2, 3],
            vec![EdgeId::new(0, 4), EdgeId::new(1, 3)]
        )
        .is_err());
    }

    // -- gradients -----------------------------------------------------------

    fn surrogate_loss_value(
        p: &PolicyParams,
        inst: &Instance,
        mode: Mode,
        subset: Option<&[usize]>,
        choices: &[EdgeId],
        coeff: f64,
        entropy_weight: f64,
    ) -> f64 {
        let trace = rollout(p, inst, mode, subset, ActionSource::Forced(choices)).unwrap();
        let lp: f64 = trace.step_logprob.iter().sum();
        let ent: f64 = trace.step_entropy.iter().sum();
        -coeff * lp - entropy_weight * ent
    }

    fn check_gradient(mode: Mode, n: usize, subset: Option<Vec<usize>>) {
        let p = params(8, 1, 31);
        let i = inst(n, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let sampled = rollout(&p, &i, mode, subset.as_deref(), ActionSource::Sample(&mut rng))
            .unwrap();
        let coeff = 1.3;
        let alpha = 0.7;
        let kappa = sampled.len() as f64;
        let entropy_weight = alpha / kappa;
        let coeffs = vec![coeff; sampled.len()];
        let (grad, loss) = crate::training::surrogate_gradient(
            &p,
            mode,
            &i,
            subset.as_deref(),
            &sampled.chosen,
            &coeffs,
            entropy_weight,
        )
        .unwrap();
        let center = surrogate_loss_value(
            &p,
            &i,
            mode,
            subset.as_deref(),
            &sampled.chosen,
            coeff,
            entropy_weight,
        );
        assert!((loss - center).abs() < 1e-12);

        let flat = p.flatten();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for j in 0..flat.len() {
            let mut plus = flat.clone();
            plus[j] += h;
            let mut pp = p.clone();
            pp.set_from_flat(&plus);
            let up = surrogate_loss_value(
                &pp,
                &i,
                mode,
                subset.as_deref(),
                &sampled.chosen,
                coeff,
                entropy_weight,
            );
            let mut minus = flat.clone();
            minus[j] -= h;
            let mut pm = p.clone();
            pm.set_from_flat(&minus);
            let down = surrogate_loss_value(
                &pm,
                &i,
                mode,
                subset.as_deref(),
                &sampled.chosen,
                coeff,
                entropy_weight,
            );
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_tree() {
        check_gradient(Mode::Tree, 5, None);
    }

    #[test]
    fn gradient_matches_finite_differences_matching() {
        check_gradient(Mode::Matching, 6, Some(vec![0, 1, 2, 3, 4, 5]));
    }
}
