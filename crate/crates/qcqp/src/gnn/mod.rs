//! Tripartite message-passing networks over QCQP graphs.
//!
//! The architecture mirrors the refinement rounds in [`crate::wl`]: an
//! embedding layer lifts raw node features to a hidden space, each of `T`
//! rounds runs four sub-layer updates (quad via variables; constraints via
//! variables and quads; quad via constraints; variables via constraints and
//! quads), and a readout maps final hidden states to either one scalar per
//! graph or one value per variable.
//!
//! Messages are rectified affine maps; updates and the readout are two-layer
//! perceptrons over concatenated inputs; aggregation is the plain weighted
//! sum `sum w * f(h)` over the incident edges, with no normalization.
//! Everything runs in `f64` with a fixed summation order, so forward passes,
//! gradients, and training runs are bit-reproducible.
//!
//! Gradients are computed by a hand-written reverse pass over the cached
//! forward trace; `tests` pin every parameter against central finite
//! differences.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{
    evaluate_accuracy, evaluate_loss, one_cycle_lr, train, Label, TrainConfig, TrainRun,
    TrainSample,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::TripartiteGraph;

/// Arity of the raw variable-node feature tuple:
/// `(p, lower value, lower indicator, upper value, upper indicator)`.
pub const VAR_FEATURE_ARITY: usize = 5;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("task/label mismatch: {0}")]
    TaskMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Readout flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputMode {
    /// One scalar from pooled hidden states.
    GraphScalar,
    /// One value per variable node.
    NodeVector,
}

/// Supervised target the network is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Feasibility,
    Objective,
    Solution,
}

impl Task {
    pub fn default_mode(self) -> OutputMode {
        match self {
            Task::Feasibility | Task::Objective => OutputMode::GraphScalar,
            Task::Solution => OutputMode::NodeVector,
        }
    }
}

/// How the per-variable output is produced in `NodeVector` mode.
///
/// `PerNode` applies the readout to each variable's own hidden state next to
/// the pooled context, so one parameter set serves every problem size.
/// `Pooled` reads all `n` outputs from pooled features alone and therefore
/// hard-wires `n` into the readout shape; it exists as a config switch for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionReadout {
    PerNode,
    Pooled { output_len: usize },
}

/// Hyperparameters fixing all parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Message-passing rounds `T`.
    pub rounds: usize,
    /// Hidden width `d`.
    pub width: usize,
    /// Embedding dimension, `d` unless overridden.
    pub embed_dim: usize,
    pub output_mode: OutputMode,
    pub task: Task,
    pub solution_readout: SolutionReadout,
}

impl GnnConfig {
    pub fn new(rounds: usize, width: usize, output_mode: OutputMode, task: Task) -> Self {
        Self {
            rounds,
            width,
            embed_dim: width,
            output_mode,
            task,
            solution_readout: SolutionReadout::PerNode,
        }
    }

    /// Standard configuration for a task: two rounds, width 64.
    pub fn for_task(task: Task) -> Self {
        Self::new(2, 64, task.default_mode(), task)
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.rounds == 0 || self.width == 0 || self.embed_dim == 0 {
            return Err(GnnError::Config(
                "rounds, width, and embed_dim must be positive".into(),
            ));
        }
        if let SolutionReadout::Pooled { output_len } = self.solution_readout {
            if output_len == 0 {
                return Err(GnnError::Config("pooled output length must be positive".into()));
            }
            if self.output_mode != OutputMode::NodeVector {
                return Err(GnnError::Config(
                    "pooled readout requires NodeVector mode".into(),
                ));
            }
        }
        Ok(())
    }

    /// Hidden dimension entering round `t`.
    fn dim_in(&self, round: usize) -> usize {
        if round == 0 {
            self.embed_dim
        } else {
            self.width
        }
    }

    /// Readout input width.
    fn readout_input(&self) -> usize {
        match self.output_mode {
            OutputMode::GraphScalar => 3 * self.width,
            OutputMode::NodeVector => match self.solution_readout {
                SolutionReadout::PerNode => 4 * self.width,
                SolutionReadout::Pooled { .. } => 3 * self.width,
            },
        }
    }

    fn readout_output(&self) -> usize {
        match (self.output_mode, self.solution_readout) {
            (OutputMode::NodeVector, SolutionReadout::Pooled { output_len }) => output_len,
            _ => 1,
        }
    }
}

/// Dense affine map `y = W x + b`, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    fn uniform(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (input.max(1) as f64).sqrt();
        let weight = (0..input * output)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self {
            input,
            output,
            weight,
            bias: vec![0.0; output],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(out.len(), self.output);
        for (o, out_slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.input..(o + 1) * self.input];
            let mut acc = self.bias[o];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *out_slot = acc;
        }
    }

    /// Accumulates parameter gradients and (optionally) the input gradient.
    fn backward(&self, x: &[f64], dout: &[f64], dx: Option<&mut [f64]>, grad: &mut Affine) {
        for (o, &d) in dout.iter().enumerate() {
            let row = &mut grad.weight[o * self.input..(o + 1) * self.input];
            for (slot, &xv) in row.iter_mut().zip(x) {
                *slot += d * xv;
            }
            grad.bias[o] += d;
        }
        if let Some(dx) = dx {
            for (o, &d) in dout.iter().enumerate() {
                let row = &self.weight[o * self.input..(o + 1) * self.input];
                for (slot, &w) in dx.iter_mut().zip(row) {
                    *slot += d * w;
                }
            }
        }
    }

    fn visit(&self, f: &mut impl FnMut(f64)) {
        self.weight.iter().for_each(|&v| f(v));
        self.bias.iter().for_each(|&v| f(v));
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for v in self.weight.iter_mut() {
            f(v);
        }
        for v in self.bias.iter_mut() {
            f(v);
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Two-layer perceptron: affine, rectifier, affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Affine,
    pub output: Affine,
}

impl Mlp {
    fn uniform(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Affine::uniform(input, hidden, rng),
            output: Affine::uniform(hidden, output, rng),
        }
    }

    fn visit(&self, f: &mut impl FnMut(f64)) {
        self.hidden.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.hidden.visit_mut(f);
        self.output.visit_mut(f);
    }

    fn len(&self) -> usize {
        self.hidden.len() + self.output.len()
    }
}

/// Per-round learnable functions: six message maps and four update
/// perceptrons.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundParams {
    /// Variable messages feeding quad nodes.
    pub msg_var_quad: Affine,
    /// Variable messages feeding constraint nodes.
    pub msg_var_cons: Affine,
    /// Intermediate quad messages feeding constraint nodes.
    pub msg_quad_cons: Affine,
    /// Constraint messages feeding quad nodes.
    pub msg_cons_quad: Affine,
    /// Constraint messages feeding variable nodes.
    pub msg_cons_var: Affine,
    /// Updated quad messages feeding variable nodes.
    pub msg_quad_var: Affine,
    /// Quad update from (own state, variable aggregate).
    pub upd_quad_mid: Mlp,
    /// Constraint update from (own state, variable aggregate, quad aggregate).
    pub upd_cons: Mlp,
    /// Quad update from (intermediate state, constraint aggregate).
    pub upd_quad: Mlp,
    /// Variable update from (own state, constraint aggregate, quad aggregate).
    pub upd_var: Mlp,
}

impl RoundParams {
    fn visit(&self, f: &mut impl FnMut(f64)) {
        for affine in self.messages() {
            affine.visit(f);
        }
        for mlp in self.updates() {
            mlp.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.msg_var_quad.visit_mut(f);
        self.msg_var_cons.visit_mut(f);
        self.msg_quad_cons.visit_mut(f);
        self.msg_cons_quad.visit_mut(f);
        self.msg_cons_var.visit_mut(f);
        self.msg_quad_var.visit_mut(f);
        self.upd_quad_mid.visit_mut(f);
        self.upd_cons.visit_mut(f);
        self.upd_quad.visit_mut(f);
        self.upd_var.visit_mut(f);
    }

    fn messages(&self) -> [&Affine; 6] {
        [
            &self.msg_var_quad,
            &self.msg_var_cons,
            &self.msg_quad_cons,
            &self.msg_cons_quad,
            &self.msg_cons_var,
            &self.msg_quad_var,
        ]
    }

    fn updates(&self) -> [&Mlp; 4] {
        [
            &self.upd_quad_mid,
            &self.upd_cons,
            &self.upd_quad,
            &self.upd_var,
        ]
    }

    fn len(&self) -> usize {
        self.messages().iter().map(|a| a.len()).sum::<usize>()
            + self.updates().iter().map(|m| m.len()).sum::<usize>()
    }
}

/// Complete parameter set; shapes are a pure function of the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub config: GnnConfig,
    pub embed_var: Affine,
    pub embed_quad: Affine,
    pub embed_cons: Affine,
    pub rounds: Vec<RoundParams>,
    pub readout: Mlp,
}

impl GnnParams {
    pub fn param_count(&self) -> usize {
        self.embed_var.len()
            + self.embed_quad.len()
            + self.embed_cons.len()
            + self.rounds.iter().map(|r| r.len()).sum::<usize>()
            + self.readout.len()
    }

    /// Canonical flat view of all scalars.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.visit(&mut |v| flat.push(v));
        flat
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), GnnError> {
        if flat.len() != self.param_count() {
            return Err(GnnError::Shape(format!(
                "flat parameter count {} does not match {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter();
        self.visit_mut(&mut |v| *v = *it.next().unwrap());
        Ok(())
    }

    pub fn visit(&self, f: &mut impl FnMut(f64)) {
        self.embed_var.visit(f);
        self.embed_quad.visit(f);
        self.embed_cons.visit(f);
        for round in &self.rounds {
            round.visit(f);
        }
        self.readout.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.embed_var.visit_mut(f);
        self.embed_quad.visit_mut(f);
        self.embed_cons.visit_mut(f);
        for round in &mut self.rounds {
            round.visit_mut(f);
        }
        self.readout.visit_mut(f);
    }

    /// Zeroed parameter set of the same shape, for gradient accumulation.
    pub fn zeros_like(&self) -> GnnParams {
        let mut copy = self.clone();
        copy.visit_mut(&mut |v| *v = 0.0);
        copy
    }

    /// Verifies every affine shape against the configuration.
    pub fn audit(&self) -> Result<(), GnnError> {
        let cfg = &self.config;
        cfg.validate()?;
        let expect = |affine: &Affine, input: usize, output: usize, what: &str| {
            if affine.input != input
                || affine.output != output
                || affine.weight.len() != input * output
                || affine.bias.len() != output
            {
                return Err(GnnError::Shape(format!(
                    "{what}: expected {input}x{output}, got {}x{}",
                    affine.input, affine.output
                )));
            }
            Ok(())
        };
        expect(&self.embed_var, VAR_FEATURE_ARITY, cfg.embed_dim, "embed_var")?;
        expect(&self.embed_quad, 1, cfg.embed_dim, "embed_quad")?;
        expect(&self.embed_cons, 1, cfg.embed_dim, "embed_cons")?;
        if self.rounds.len() != cfg.rounds {
            return Err(GnnError::Shape(format!(
                "expected {} rounds, got {}",
                cfg.rounds,
                self.rounds.len()
            )));
        }
        let d = cfg.width;
        for (t, round) in self.rounds.iter().enumerate() {
            let h_in = cfg.dim_in(t);
            expect(&round.msg_var_quad, h_in, d, "msg_var_quad")?;
            expect(&round.msg_var_cons, h_in, d, "msg_var_cons")?;
            expect(&round.msg_quad_cons, d, d, "msg_quad_cons")?;
            expect(&round.msg_cons_quad, d, d, "msg_cons_quad")?;
            expect(&round.msg_cons_var, d, d, "msg_cons_var")?;
            expect(&round.msg_quad_var, d, d, "msg_quad_var")?;
            expect(&round.upd_quad_mid.hidden, h_in + d, d, "upd_quad_mid")?;
            expect(&round.upd_quad_mid.output, d, d, "upd_quad_mid out")?;
            expect(&round.upd_cons.hidden, h_in + 2 * d, d, "upd_cons")?;
            expect(&round.upd_cons.output, d, d, "upd_cons out")?;
            expect(&round.upd_quad.hidden, 2 * d, d, "upd_quad")?;
            expect(&round.upd_quad.output, d, d, "upd_quad out")?;
            expect(&round.upd_var.hidden, h_in + 2 * d, d, "upd_var")?;
            expect(&round.upd_var.output, d, d, "upd_var out")?;
        }
        expect(&self.readout.hidden, cfg.readout_input(), d, "readout hidden")?;
        expect(&self.readout.output, d, cfg.readout_output(), "readout output")?;
        Ok(())
    }
}

/// Deterministic initialization: weights uniform in
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero, draw order fixed.
pub fn init_params(config: &GnnConfig, seed: u64) -> GnnParams {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.width;
    let rounds = (0..config.rounds)
        .map(|t| {
            let h_in = config.dim_in(t);
            RoundParams {
                msg_var_quad: Affine::uniform(h_in, d, &mut rng),
                msg_var_cons: Affine::uniform(h_in, d, &mut rng),
                msg_quad_cons: Affine::uniform(d, d, &mut rng),
                msg_cons_quad: Affine::uniform(d, d, &mut rng),
                msg_cons_var: Affine::uniform(d, d, &mut rng),
                msg_quad_var: Affine::uniform(d, d, &mut rng),
                upd_quad_mid: Mlp::uniform(h_in + d, d, d, &mut rng),
                upd_cons: Mlp::uniform(h_in + 2 * d, d, d, &mut rng),
                upd_quad: Mlp::uniform(2 * d, d, d, &mut rng),
                upd_var: Mlp::uniform(h_in + 2 * d, d, d, &mut rng),
            }
        })
        .collect();
    GnnParams {
        config: *config,
        embed_var: Affine::uniform(VAR_FEATURE_ARITY, config.embed_dim, &mut rng),
        embed_quad: Affine::uniform(1, config.embed_dim, &mut rng),
        embed_cons: Affine::uniform(1, config.embed_dim, &mut rng),
        rounds,
        readout: Mlp::uniform(config.readout_input(), d, config.readout_output(), &mut rng),
    }
}

// ---------------------------------------------------------------------------
// Forward pass with cached trace, and the matching reverse pass.
// ---------------------------------------------------------------------------

/// Row-major `[nodes x dim]` activation block.
#[derive(Debug, Clone, Default)]
struct NodeMat {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl NodeMat {
    fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    fn row_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

fn relu_in_place(pre: &NodeMat, post: &mut NodeMat) {
    for (p, q) in pre.data.iter().zip(post.data.iter_mut()) {
        *q = p.max(0.0);
    }
}

fn relu_backward(pre: &NodeMat, dout: &NodeMat, dpre: &mut NodeMat) {
    for ((p, d), slot) in pre.data.iter().zip(&dout.data).zip(dpre.data.iter_mut()) {
        *slot = if *p > 0.0 { *d } else { 0.0 };
    }
}

/// Applies an affine map row-wise: `out[i] = W input[i] + b`.
fn affine_rows(affine: &Affine, input: &NodeMat) -> NodeMat {
    let mut out = NodeMat::zeros(input.rows, affine.output);
    for idx in 0..input.rows {
        affine.apply(input.row(idx), out.row_mut(idx));
    }
    out
}

fn affine_rows_backward(
    affine: &Affine,
    input: &NodeMat,
    dout: &NodeMat,
    dinput: Option<&mut NodeMat>,
    grad: &mut Affine,
) {
    match dinput {
        Some(dinput) => {
            for idx in 0..input.rows {
                affine.backward(
                    input.row(idx),
                    dout.row(idx),
                    Some(dinput.row_mut(idx)),
                    grad,
                );
            }
        }
        None => {
            for idx in 0..input.rows {
                affine.backward(input.row(idx), dout.row(idx), None, grad);
            }
        }
    }
}

/// Rectified affine message per source node.
struct MsgTrace {
    pre: NodeMat,
    post: NodeMat,
}

fn message_forward(affine: &Affine, input: &NodeMat) -> MsgTrace {
    let pre = affine_rows(affine, input);
    let mut post = NodeMat::zeros(pre.rows, pre.dim);
    relu_in_place(&pre, &mut post);
    MsgTrace { pre, post }
}

fn message_backward(
    affine: &Affine,
    input: &NodeMat,
    trace: &MsgTrace,
    dpost: &NodeMat,
    dinput: &mut NodeMat,
    grad: &mut Affine,
) {
    let mut dpre = NodeMat::zeros(trace.pre.rows, trace.pre.dim);
    relu_backward(&trace.pre, dpost, &mut dpre);
    affine_rows_backward(affine, input, &dpre, Some(dinput), grad);
}

/// Two-layer perceptron applied row-wise, keeping the trace.
struct MlpTrace {
    input: NodeMat,
    hidden_pre: NodeMat,
    hidden: NodeMat,
    output: NodeMat,
}

fn mlp_forward(mlp: &Mlp, input: NodeMat) -> MlpTrace {
    let hidden_pre = affine_rows(&mlp.hidden, &input);
    let mut hidden = NodeMat::zeros(hidden_pre.rows, hidden_pre.dim);
    relu_in_place(&hidden_pre, &mut hidden);
    let output = affine_rows(&mlp.output, &hidden);
    MlpTrace {
        input,
        hidden_pre,
        hidden,
        output,
    }
}

fn mlp_backward(
    mlp: &Mlp,
    trace: &MlpTrace,
    dout: &NodeMat,
    dinput: &mut NodeMat,
    grad: &mut Mlp,
) {
    let mut dhidden = NodeMat::zeros(trace.hidden.rows, trace.hidden.dim);
    affine_rows_backward(&mlp.output, &trace.hidden, dout, Some(&mut dhidden), &mut grad.output);
    let mut dhidden_pre = NodeMat::zeros(trace.hidden_pre.rows, trace.hidden_pre.dim);
    relu_backward(&trace.hidden_pre, &dhidden, &mut dhidden_pre);
    affine_rows_backward(&mlp.hidden, &trace.input, &dhidden_pre, Some(dinput), &mut grad.hidden);
}

/// Weighted-sum aggregation along edges in list order; `sources[edge.src]`
/// flows into `targets[edge.dst]`.
fn aggregate(
    edges: &[crate::graph::Edge],
    take_a: bool,
    sources: &NodeMat,
    num_targets: usize,
) -> NodeMat {
    let mut out = NodeMat::zeros(num_targets, sources.dim);
    for edge in edges {
        let (src, dst) = if take_a {
            (edge.a, edge.b)
        } else {
            (edge.b, edge.a)
        };
        let row = sources.row(src);
        let slot = out.row_mut(dst);
        for (o, &v) in slot.iter_mut().zip(row) {
            *o += edge.weight * v;
        }
    }
    out
}

fn aggregate_backward(
    edges: &[crate::graph::Edge],
    take_a: bool,
    dagg: &NodeMat,
    dsources: &mut NodeMat,
) {
    for edge in edges {
        let (src, dst) = if take_a {
            (edge.a, edge.b)
        } else {
            (edge.b, edge.a)
        };
        let dout = dagg.row(dst);
        let slot = dsources.row_mut(src);
        for (o, &v) in slot.iter_mut().zip(dout) {
            *o += edge.weight * v;
        }
    }
}

fn concat_rows(parts: &[&NodeMat], rows: usize) -> NodeMat {
    let dim: usize = parts.iter().map(|p| p.dim).sum();
    let mut out = NodeMat::zeros(rows, dim);
    for idx in 0..rows {
        let slot = out.row_mut(idx);
        let mut offset = 0;
        for part in parts {
            slot[offset..offset + part.dim].copy_from_slice(part.row(idx));
            offset += part.dim;
        }
    }
    out
}

fn split_rows(dcat: &NodeMat, dims: &[usize]) -> Vec<NodeMat> {
    let mut outs: Vec<NodeMat> = dims.iter().map(|&d| NodeMat::zeros(dcat.rows, d)).collect();
    for idx in 0..dcat.rows {
        let row = dcat.row(idx);
        let mut offset = 0;
        for (part, &d) in outs.iter_mut().zip(dims) {
            part.row_mut(idx).copy_from_slice(&row[offset..offset + d]);
            offset += d;
        }
    }
    outs
}

fn column_sum(mat: &NodeMat) -> Vec<f64> {
    let mut out = vec![0.0; mat.dim];
    for idx in 0..mat.rows {
        for (o, &v) in out.iter_mut().zip(mat.row(idx)) {
            *o += v;
        }
    }
    out
}

struct RoundTrace {
    msg_var_quad: MsgTrace,
    upd_quad_mid: MlpTrace,
    msg_var_cons: MsgTrace,
    msg_quad_cons: MsgTrace,
    upd_cons: MlpTrace,
    msg_cons_quad: MsgTrace,
    upd_quad: MlpTrace,
    msg_cons_var: MsgTrace,
    msg_quad_var: MsgTrace,
    upd_var: MlpTrace,
}

struct ForwardTrace {
    feat_var: NodeMat,
    feat_quad: NodeMat,
    feat_cons: NodeMat,
    embed_var_pre: NodeMat,
    embed_quad_pre: NodeMat,
    embed_cons_pre: NodeMat,
    // Variable hidden states entering each round; index 0 holds the
    // embeddings. Quad/constraint states live inside the cached MLP inputs.
    hidden_var: Vec<NodeMat>,
    rounds: Vec<RoundTrace>,
    readout: MlpTrace,
    output: Vec<f64>,
}

fn feature_matrices(g: &TripartiteGraph) -> (NodeMat, NodeMat, NodeMat) {
    let mut feat_var = NodeMat::zeros(g.num_vars(), VAR_FEATURE_ARITY);
    for (j, node) in g.var_nodes.iter().enumerate() {
        let (lo_val, lo_ind) = node.lower.encoding();
        let (hi_val, hi_ind) = node.upper.encoding();
        let row = feat_var.row_mut(j);
        row[0] = node.linear;
        row[1] = lo_val;
        row[2] = lo_ind;
        row[3] = hi_val;
        row[4] = hi_ind;
    }
    let mut feat_quad = NodeMat::zeros(g.num_quads(), 1);
    for (idx, node) in g.quad_nodes.iter().enumerate() {
        feat_quad.row_mut(idx)[0] = node.coeff;
    }
    let mut feat_cons = NodeMat::zeros(g.num_cons(), 1);
    for (i, node) in g.cons_nodes.iter().enumerate() {
        feat_cons.row_mut(i)[0] = node.rhs;
    }
    (feat_var, feat_quad, feat_cons)
}

fn forward_trace(params: &GnnParams, g: &TripartiteGraph) -> Result<ForwardTrace, GnnError> {
    params.audit()?;
    let cfg = &params.config;
    if let SolutionReadout::Pooled { output_len } = cfg.solution_readout {
        if output_len != g.num_vars() {
            return Err(GnnError::Shape(format!(
                "pooled readout emits {output_len} values but the graph has {} variables",
                g.num_vars()
            )));
        }
    }

    let (feat_var, feat_quad, feat_cons) = feature_matrices(g);

    let embed = |affine: &Affine, feats: &NodeMat| -> (NodeMat, NodeMat) {
        let pre = affine_rows(affine, feats);
        let mut post = NodeMat::zeros(pre.rows, pre.dim);
        relu_in_place(&pre, &mut post);
        (pre, post)
    };
    let (embed_var_pre, h_var0) = embed(&params.embed_var, &feat_var);
    let (embed_quad_pre, h_quad0) = embed(&params.embed_quad, &feat_quad);
    let (embed_cons_pre, h_cons0) = embed(&params.embed_cons, &feat_cons);

    let mut hidden_var = vec![h_var0];
    let mut h_quad_cur = h_quad0;
    let mut h_cons_cur = h_cons0;
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in &params.rounds {
        let h_var = hidden_var.last().unwrap();
        let h_quad = &h_quad_cur;
        let h_cons = &h_cons_cur;

        // Quad nodes via variable nodes.
        let msg_var_quad = message_forward(&round.msg_var_quad, h_var);
        let agg_vq = aggregate(&g.e12, true, &msg_var_quad.post, g.num_quads());
        let upd_quad_mid = mlp_forward(
            &round.upd_quad_mid,
            concat_rows(&[h_quad, &agg_vq], g.num_quads()),
        );

        // Constraint nodes via variable and quad nodes.
        let msg_var_cons = message_forward(&round.msg_var_cons, h_var);
        let agg_vc = aggregate(&g.e13, true, &msg_var_cons.post, g.num_cons());
        let msg_quad_cons = message_forward(&round.msg_quad_cons, &upd_quad_mid.output);
        let agg_qc = aggregate(&g.e23, true, &msg_quad_cons.post, g.num_cons());
        let upd_cons = mlp_forward(
            &round.upd_cons,
            concat_rows(&[h_cons, &agg_vc, &agg_qc], g.num_cons()),
        );

        // Quad nodes via constraint nodes.
        let msg_cons_quad = message_forward(&round.msg_cons_quad, &upd_cons.output);
        let agg_cq = aggregate(&g.e23, false, &msg_cons_quad.post, g.num_quads());
        let upd_quad = mlp_forward(
            &round.upd_quad,
            concat_rows(&[&upd_quad_mid.output, &agg_cq], g.num_quads()),
        );

        // Variable nodes via constraint and quad nodes.
        let msg_cons_var = message_forward(&round.msg_cons_var, &upd_cons.output);
        let agg_cv = aggregate(&g.e13, false, &msg_cons_var.post, g.num_vars());
        let msg_quad_var = message_forward(&round.msg_quad_var, &upd_quad.output);
        let agg_qv = aggregate(&g.e12, false, &msg_quad_var.post, g.num_vars());
        let upd_var = mlp_forward(
            &round.upd_var,
            concat_rows(&[h_var, &agg_cv, &agg_qv], g.num_vars()),
        );

        hidden_var.push(upd_var.output.clone());
        h_quad_cur = upd_quad.output.clone();
        h_cons_cur = upd_cons.output.clone();
        rounds.push(RoundTrace {
            msg_var_quad,
            upd_quad_mid,
            msg_var_cons,
            msg_quad_cons,
            upd_cons,
            msg_cons_quad,
            upd_quad,
            msg_cons_var,
            msg_quad_var,
            upd_var,
        });
    }

    let h_var = hidden_var.last().unwrap();
    let h_quad = &h_quad_cur;
    let h_cons = &h_cons_cur;
    let d = cfg.width;
    let sum_var = column_sum(h_var);
    let sum_quad = column_sum(h_quad);
    let sum_cons = column_sum(h_cons);

    let readout_input = match cfg.output_mode {
        OutputMode::GraphScalar => {
            let mut input = NodeMat::zeros(1, 3 * d);
            input.row_mut(0)[..d].copy_from_slice(&sum_var);
            input.row_mut(0)[d..2 * d].copy_from_slice(&sum_quad);
            input.row_mut(0)[2 * d..].copy_from_slice(&sum_cons);
            input
        }
        OutputMode::NodeVector => match cfg.solution_readout {
            SolutionReadout::PerNode => {
                let n = g.num_vars();
                let mut input = NodeMat::zeros(n, 4 * d);
                for j in 0..n {
                    let own = h_var.row(j);
                    let row = input.row_mut(j);
                    row[..d].copy_from_slice(own);
                    for (slot, (&total, &mine)) in
                        row[d..2 * d].iter_mut().zip(sum_var.iter().zip(own))
                    {
                        *slot = total - mine;
                    }
                    row[2 * d..3 * d].copy_from_slice(&sum_quad);
                    row[3 * d..].copy_from_slice(&sum_cons);
                }
                input
            }
            SolutionReadout::Pooled { .. } => {
                let mut input = NodeMat::zeros(1, 3 * d);
                input.row_mut(0)[..d].copy_from_slice(&sum_var);
                input.row_mut(0)[d..2 * d].copy_from_slice(&sum_quad);
                input.row_mut(0)[2 * d..].copy_from_slice(&sum_cons);
                input
            }
        },
    };

    let readout = mlp_forward(&params.readout, readout_input);
    let output = readout.output.data.clone();

    Ok(ForwardTrace {
        feat_var,
        feat_quad,
        feat_cons,
        embed_var_pre,
        embed_quad_pre,
        embed_cons_pre,
        hidden_var,
        rounds,
        readout,
        output,
    })
}

/// Runs the network on a graph: one scalar in `GraphScalar` mode, one value
/// per variable in `NodeVector` mode.
///
/// ```
/// use qcqp::counterexamples::build_objective_pair;
/// use qcqp::gnn::{forward, init_params, GnnConfig, OutputMode, Task};
/// use qcqp::graph::build_graph;
///
/// let cfg = GnnConfig::new(2, 16, OutputMode::GraphScalar, Task::Objective);
/// let params = init_params(&cfg, 42);
///
/// let (triangles, cycle) = build_objective_pair();
/// let y1 = forward(&params, &build_graph(&triangles))?[0];
/// let y2 = forward(&params, &build_graph(&cycle))?[0];
/// // Refinement-equal graphs get equal outputs, whatever the parameters.
/// assert!((y1 - y2).abs() <= 1e-6);
/// # Ok::<(), qcqp::gnn::GnnError>(())
/// ```
pub fn forward(params: &GnnParams, g: &TripartiteGraph) -> Result<Vec<f64>, GnnError> {
    Ok(forward_trace(params, g)?.output)
}

/// Loss functions per task: mean squared error for objective/solution
/// targets, binary cross-entropy with a logistic link for feasibility.
pub fn loss(pred: &[f64], label: &Label) -> Result<f64, GnnError> {
    match label {
        Label::Feasibility(y) => {
            if pred.len() != 1 {
                return Err(GnnError::TaskMismatch("feasibility expects one logit".into()));
            }
            let z = pred[0];
            // softplus(z) - y z, stable for large |z|.
            Ok(z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
        }
        Label::Objective(target) => {
            if pred.len() != 1 {
                return Err(GnnError::TaskMismatch("objective expects one output".into()));
            }
            let diff = pred[0] - target;
            Ok(diff * diff)
        }
        Label::Solution(target) => {
            if pred.len() != target.len() {
                return Err(GnnError::TaskMismatch(format!(
                    "solution target length {} vs output length {}",
                    target.len(),
                    pred.len()
                )));
            }
            let n = target.len().max(1) as f64;
            Ok(pred
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n)
        }
    }
}

fn loss_backward(pred: &[f64], label: &Label) -> Vec<f64> {
    match label {
        Label::Feasibility(y) => {
            let z = pred[0];
            let sigma = 1.0 / (1.0 + (-z).exp());
            vec![sigma - y]
        }
        Label::Objective(target) => vec![2.0 * (pred[0] - target)],
        Label::Solution(target) => {
            let n = target.len().max(1) as f64;
            pred.iter()
                .zip(target)
                .map(|(p, t)| 2.0 * (p - t) / n)
                .collect()
        }
    }
}

/// Loss and its exact reverse-mode gradient with respect to every parameter.
pub fn gradient(
    params: &GnnParams,
    g: &TripartiteGraph,
    label: &Label,
) -> Result<(f64, GnnParams), GnnError> {
    let trace = forward_trace(params, g)?;
    let loss_value = loss(&trace.output, label)?;
    let dout_flat = loss_backward(&trace.output, label);

    let cfg = &params.config;
    let d = cfg.width;
    let n = g.num_vars();
    let mut grad = params.zeros_like();

    // Readout backward.
    let dout = NodeMat {
        rows: trace.readout.output.rows,
        dim: trace.readout.output.dim,
        data: dout_flat,
    };
    let mut dreadout_input = NodeMat::zeros(trace.readout.input.rows, trace.readout.input.dim);
    mlp_backward(
        &params.readout,
        &trace.readout,
        &dout,
        &mut dreadout_input,
        &mut grad.readout,
    );

    let mut dh_var = NodeMat::zeros(n, d);
    let mut dh_quad = NodeMat::zeros(g.num_quads(), d);
    let mut dh_cons = NodeMat::zeros(g.num_cons(), d);

    let spread_sum = |dsum: &[f64], target: &mut NodeMat| {
        for idx in 0..target.rows {
            for (slot, &v) in target.row_mut(idx).iter_mut().zip(dsum) {
                *slot += v;
            }
        }
    };

    match cfg.output_mode {
        OutputMode::GraphScalar => {
            let row = dreadout_input.row(0);
            spread_sum(&row[..d], &mut dh_var);
            spread_sum(&row[d..2 * d], &mut dh_quad);
            spread_sum(&row[2 * d..], &mut dh_cons);
        }
        OutputMode::NodeVector => match cfg.solution_readout {
            SolutionReadout::PerNode => {
                // input_j = (h_j, S - h_j, sum_quad, sum_cons); S = sum_k h_k.
                let mut dsum_var = vec![0.0; d];
                let mut dsum_quad = vec![0.0; d];
                let mut dsum_cons = vec![0.0; d];
                for j in 0..n {
                    let row = dreadout_input.row(j);
                    let slot = dh_var.row_mut(j);
                    for (k, s) in slot.iter_mut().enumerate() {
                        *s += row[k] - row[d + k];
                    }
                    for k in 0..d {
                        dsum_var[k] += row[d + k];
                        dsum_quad[k] += row[2 * d + k];
                        dsum_cons[k] += row[3 * d + k];
                    }
                }
                spread_sum(&dsum_var, &mut dh_var);
                spread_sum(&dsum_quad, &mut dh_quad);
                spread_sum(&dsum_cons, &mut dh_cons);
            }
            SolutionReadout::Pooled { .. } => {
                let row = dreadout_input.row(0);
                spread_sum(&row[..d], &mut dh_var);
                spread_sum(&row[d..2 * d], &mut dh_quad);
                spread_sum(&row[2 * d..], &mut dh_cons);
            }
        },
    }

    // Rounds in reverse.
    for (t, (round, trace_t)) in params.rounds.iter().zip(&trace.rounds).enumerate().rev() {
        let grad_round = &mut grad.rounds[t];
        let h_var_in = &trace.hidden_var[t];
        let h_in_dim = cfg.dim_in(t);

        let mut dh_var_in = NodeMat::zeros(n, h_in_dim);
        let mut dh_quad_in = NodeMat::zeros(g.num_quads(), h_in_dim);
        let mut dh_cons_in = NodeMat::zeros(g.num_cons(), h_in_dim);
        let mut dh_quad_mid = NodeMat::zeros(g.num_quads(), d);
        let mut dh_cons_new = dh_cons; // gradient wrt this round's constraint output

        // Variable update: inputs (h_var_in, agg cons->var, agg quad->var).
        {
            let mut dinput = NodeMat::zeros(n, h_in_dim + 2 * d);
            mlp_backward(
                &round.upd_var,
                &trace_t.upd_var,
                &dh_var,
                &mut dinput,
                &mut grad_round.upd_var,
            );
            let parts = split_rows(&dinput, &[h_in_dim, d, d]);
            for idx in 0..n {
                for (slot, &v) in dh_var_in.row_mut(idx).iter_mut().zip(parts[0].row(idx)) {
                    *slot += v;
                }
            }
            // Constraint messages into variables.
            let mut dmsg = NodeMat::zeros(g.num_cons(), d);
            aggregate_backward(&g.e13, false, &parts[1], &mut dmsg);
            message_backward(
                &round.msg_cons_var,
                &trace_t.upd_cons.output,
                &trace_t.msg_cons_var,
                &dmsg,
                &mut dh_cons_new,
                &mut grad_round.msg_cons_var,
            );
            // Quad messages into variables.
            let mut dmsg = NodeMat::zeros(g.num_quads(), d);
            aggregate_backward(&g.e12, false, &parts[2], &mut dmsg);
            message_backward(
                &round.msg_quad_var,
                &trace_t.upd_quad.output,
                &trace_t.msg_quad_var,
                &dmsg,
                &mut dh_quad,
                &mut grad_round.msg_quad_var,
            );
        }

        // Quad update: inputs (quad mid state, agg cons->quad).
        {
            let mut dinput = NodeMat::zeros(g.num_quads(), 2 * d);
            mlp_backward(
                &round.upd_quad,
                &trace_t.upd_quad,
                &dh_quad,
                &mut dinput,
                &mut grad_round.upd_quad,
            );
            let parts = split_rows(&dinput, &[d, d]);
            for idx in 0..g.num_quads() {
                for (slot, &v) in dh_quad_mid.row_mut(idx).iter_mut().zip(parts[0].row(idx)) {
                    *slot += v;
                }
            }
            let mut dmsg = NodeMat::zeros(g.num_cons(), d);
            aggregate_backward(&g.e23, false, &parts[1], &mut dmsg);
            message_backward(
                &round.msg_cons_quad,
                &trace_t.upd_cons.output,
                &trace_t.msg_cons_quad,
                &dmsg,
                &mut dh_cons_new,
                &mut grad_round.msg_cons_quad,
            );
        }

        // Constraint update: inputs (h_cons_in, agg var->cons, agg quad->cons).
        {
            let mut dinput = NodeMat::zeros(g.num_cons(), h_in_dim + 2 * d);
            mlp_backward(
                &round.upd_cons,
                &trace_t.upd_cons,
                &dh_cons_new,
                &mut dinput,
                &mut grad_round.upd_cons,
            );
            let parts = split_rows(&dinput, &[h_in_dim, d, d]);
            for idx in 0..g.num_cons() {
                for (slot, &v) in dh_cons_in.row_mut(idx).iter_mut().zip(parts[0].row(idx)) {
                    *slot += v;
                }
            }
            let mut dmsg = NodeMat::zeros(n, d);
            aggregate_backward(&g.e13, true, &parts[1], &mut dmsg);
            message_backward(
                &round.msg_var_cons,
                h_var_in,
                &trace_t.msg_var_cons,
                &dmsg,
                &mut dh_var_in,
                &mut grad_round.msg_var_cons,
            );
            let mut dmsg = NodeMat::zeros(g.num_quads(), d);
            aggregate_backward(&g.e23, true, &parts[2], &mut dmsg);
            message_backward(
                &round.msg_quad_cons,
                &trace_t.upd_quad_mid.output,
                &trace_t.msg_quad_cons,
                &dmsg,
                &mut dh_quad_mid,
                &mut grad_round.msg_quad_cons,
            );
        }

        // Quad mid update: inputs (h_quad_in, agg var->quad).
        {
            let mut dinput = NodeMat::zeros(g.num_quads(), h_in_dim + d);
            mlp_backward(
                &round.upd_quad_mid,
                &trace_t.upd_quad_mid,
                &dh_quad_mid,
                &mut dinput,
                &mut grad_round.upd_quad_mid,
            );
            let parts = split_rows(&dinput, &[h_in_dim, d]);
            for idx in 0..g.num_quads() {
                for (slot, &v) in dh_quad_in.row_mut(idx).iter_mut().zip(parts[0].row(idx)) {
                    *slot += v;
                }
            }
            let mut dmsg = NodeMat::zeros(n, d);
            aggregate_backward(&g.e12, true, &parts[1], &mut dmsg);
            message_backward(
                &round.msg_var_quad,
                h_var_in,
                &trace_t.msg_var_quad,
                &dmsg,
                &mut dh_var_in,
                &mut grad_round.msg_var_quad,
            );
        }

        dh_var = dh_var_in;
        dh_quad = dh_quad_in;
        dh_cons = dh_cons_in;
    }

    // Embedding backward.
    let embed_back = |affine: &Affine,
                      pre: &NodeMat,
                      feats: &NodeMat,
                      dpost: &NodeMat,
                      grad: &mut Affine| {
        let mut dpre = NodeMat::zeros(pre.rows, pre.dim);
        relu_backward(pre, dpost, &mut dpre);
        affine_rows_backward(affine, feats, &dpre, None, grad);
    };
    embed_back(
        &params.embed_var,
        &trace.embed_var_pre,
        &trace.feat_var,
        &dh_var,
        &mut grad.embed_var,
    );
    embed_back(
        &params.embed_quad,
        &trace.embed_quad_pre,
        &trace.feat_quad,
        &dh_quad,
        &mut grad.embed_quad,
    );
    embed_back(
        &params.embed_cons,
        &trace.embed_cons_pre,
        &trace.feat_cons,
        &dh_cons,
        &mut grad.embed_cons,
    );

    Ok((loss_value, grad))
}

/// Task-typed prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Prediction {
    /// `(class, probability)` with ties at probability 0.5 resolved feasible.
    Feasibility { feasible: bool, probability: f64 },
    Objective(f64),
    Solution(Vec<f64>),
}

/// Applies the task head to a forward pass: logistic link and 0.5 threshold
/// for feasibility, raw scalar for objective, raw vector for solution.
pub fn predict(params: &GnnParams, g: &TripartiteGraph) -> Result<Prediction, GnnError> {
    let out = forward(params, g)?;
    match params.config.task {
        Task::Feasibility => {
            let probability = 1.0 / (1.0 + (-out[0]).exp());
            Ok(Prediction::Feasibility {
                feasible: probability >= 0.5,
                probability,
            })
        }
        Task::Objective => Ok(Prediction::Objective(out[0])),
        Task::Solution => Ok(Prediction::Solution(out)),
    }
}
