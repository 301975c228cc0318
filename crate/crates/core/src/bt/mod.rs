//! Bound tightening for the pre-activation bounds that drive the big-M
//! coefficients of the network encoding.
//!
//! Nodes are processed in one forward pass, layers ascending and nodes by
//! index. Each node's interval is replaced by the min/max of its
//! pre-activation over a scheme-specific constraint set, and the encoding is
//! updated before the next node is processed.

mod stats;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encode::{embed_network, BoundSet, BoxBounds, NetworkEmbedding, NodeId, RelaxSpec};
use crate::error::BtError;
use crate::lp::{LpOptions, Sense, VarId};
use crate::milp::{MilpModel, MilpSolver, MilpStatus, SolveParams};
use crate::net::ReluNetwork;

pub use stats::{bbp_threshold, mad, mrd, BbpAnalysis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BtKind {
    /// Interval arithmetic, one layer at a time.
    #[serde(rename = "LRR")]
    Lrr,
    /// LP relaxation of the whole network.
    #[serde(rename = "RR")]
    Rr,
    /// Exact MILP over the layers preceding the node.
    #[serde(rename = "LR")]
    Lr,
    /// Exact before the node's layer, ReLUs relaxed from it onwards.
    #[serde(rename = "SEMI-RR")]
    SemiRr,
    /// The exact MILP of the whole network.
    #[serde(rename = "NO-R")]
    NoR,
}

impl BtKind {
    pub const ALL: [BtKind; 5] = [BtKind::Lrr, BtKind::Rr, BtKind::Lr, BtKind::SemiRr, BtKind::NoR];

    pub fn name(self) -> &'static str {
        match self {
            BtKind::Lrr => "LRR",
            BtKind::Rr => "RR",
            BtKind::Lr => "LR",
            BtKind::SemiRr => "SEMI-RR",
            BtKind::NoR => "NO-R",
        }
    }

    /// Whether subproblems are MILPs (and so accept a time limit).
    pub fn is_milp(self) -> bool {
        matches!(self, BtKind::Lr | BtKind::SemiRr | BtKind::NoR)
    }

    /// Whether output bounds can flow back into earlier layers.
    pub fn propagates_backward(self) -> bool {
        matches!(self, BtKind::Rr | BtKind::SemiRr | BtKind::NoR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtScheme {
    pub kind: BtKind,
    /// Seconds per MILP subproblem; the solver's best bound is used on expiry.
    pub subproblem_time_limit: Option<f64>,
    /// Number of passes, each starting from the previous result.
    pub rounds: usize,
}

impl BtScheme {
    pub fn new(kind: BtKind) -> Self {
        Self {
            kind,
            subproblem_time_limit: None,
            rounds: 1,
        }
    }

    pub fn with_time_limit(mut self, seconds: f64) -> Result<Self, BtError> {
        if !self.kind.is_milp() {
            return Err(BtError::Scheme(format!("{} solves no MILP subproblems", self.kind.name())));
        }
        if !(seconds >= 0.0) || !seconds.is_finite() {
            return Err(BtError::Scheme(format!("time limit {seconds} must be finite and nonnegative")));
        }
        self.subproblem_time_limit = Some(seconds);
        Ok(self)
    }

    pub fn with_rounds(mut self, rounds: usize) -> Result<Self, BtError> {
        if rounds == 0 {
            return Err(BtError::Scheme("rounds must be at least 1".into()));
        }
        self.rounds = rounds;
        Ok(self)
    }
}

impl fmt::Display for BtScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if let Some(t) = self.subproblem_time_limit {
            write!(f, "({t})")?;
        }
        Ok(())
    }
}

impl FromStr for BtScheme {
    type Err = BtError;

    /// Parses `lrr`, `rr`, `lr`, `semi-rr` or `no-r`, optionally followed by
    /// a subproblem time limit in seconds, e.g. `no-r(60)`.
    fn from_str(s: &str) -> Result<Self, BtError> {
        let text = s.trim().to_ascii_lowercase();
        let (name, limit) = match text.find('(') {
            Some(open) => {
                let inner = text[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| BtError::Scheme(format!("unclosed time limit in {s:?}")))?;
                let t: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| BtError::Scheme(format!("bad time limit {inner:?} in {s:?}")))?;
                (&text[..open], Some(t))
            }
            None => (text.as_str(), None),
        };
        let kind = match name.trim() {
            "lrr" => BtKind::Lrr,
            "rr" => BtKind::Rr,
            "lr" => BtKind::Lr,
            "semi-rr" => BtKind::SemiRr,
            "no-r" => BtKind::NoR,
            other => {
                return Err(BtError::Scheme(format!(
                    "unknown scheme {other:?}; expected lrr, rr, lr, semi-rr or no-r"
                )))
            }
        };
        let scheme = BtScheme::new(kind);
        match limit {
            Some(t) => scheme.with_time_limit(t),
            None => Ok(scheme),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtParams {
    /// Relative gap for MILP subproblems; 0 proves optimality.
    pub gap_tolerance: f64,
    pub lp: LpOptions,
}

impl Default for BtParams {
    fn default() -> Self {
        Self {
            gap_tolerance: 0.0,
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BtReport {
    pub scheme: BtScheme,
    #[serde(skip)]
    pub bounds: BoundSet,
    /// Seconds spent per node, summed over rounds (LRR pass excluded).
    pub node_times: Vec<Vec<f64>>,
    pub lrr_time: f64,
    pub total_time: f64,
    /// Hidden nodes with `U <= 0`.
    pub dead_fraction: f64,
    /// Hidden nodes with `L >= 0` that are not dead.
    pub active_fraction: f64,
    pub mad: f64,
    /// Set once an optimal reference is known.
    pub mrd: Option<f64>,
    pub subproblems: usize,
    pub subproblem_timeouts: usize,
}

impl BtReport {
    pub fn unstable_fraction(&self) -> f64 {
        1.0 - self.dead_fraction - self.active_fraction
    }

    /// Whether the bounds are provably the tightest the scheme can give.
    pub fn is_exact(&self) -> bool {
        self.subproblem_timeouts == 0
    }
}

/// Fractions of hidden nodes that are dead (`U <= 0`) and stably active
/// (`L >= 0`, not dead). Zero when the network has no hidden nodes.
pub fn neuron_fractions(bounds: &BoundSet) -> (f64, f64) {
    let k = bounds.lower.len();
    let (mut dead, mut active, mut total) = (0usize, 0usize, 0usize);
    for layer in 1..k.saturating_sub(1) {
        for (&l, &u) in bounds.lower[layer].iter().zip(&bounds.upper[layer]) {
            total += 1;
            if u <= 0.0 {
                dead += 1;
            } else if l >= 0.0 {
                active += 1;
            }
        }
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (dead as f64 / total as f64, active as f64 / total as f64)
}

fn check_box(name: &str, b: &BoxBounds, len: usize) -> Result<(), BtError> {
    if b.len() != len {
        return Err(BtError::Box(format!("{name} box has {} intervals, expected {len}", b.len())));
    }
    for (j, &(l, u)) in b.iter().enumerate() {
        if !l.is_finite() || !u.is_finite() || l > u {
            return Err(BtError::Box(format!("{name} interval {j} is [{l}, {u}]")));
        }
    }
    Ok(())
}

/// Interval arithmetic for one node from the bounds of the previous layer.
/// Inputs enter as is; hidden nodes enter through their ReLU.
pub fn interval_bounds(net: &ReluNetwork, bounds: &BoundSet, node: NodeId) -> (f64, f64) {
    let k = node.layer;
    let layer = net.layer(k);
    let mut lo = layer.bias()[node.index];
    let mut hi = lo;
    for (i, &w) in layer.row(node.index).iter().enumerate() {
        let (mut l, mut u) = (bounds.lower[k - 1][i], bounds.upper[k - 1][i]);
        if k > 1 {
            l = l.max(0.0);
            u = u.max(0.0);
        }
        if w == 0.0 {
            continue;
        }
        let (a, b) = (w * l, w * u);
        lo += a.min(b);
        hi += a.max(b);
    }
    (lo, hi)
}

/// One forward interval pass over layers `1..=K`, keeping the current bound
/// where it is already tighter.
pub fn lrr_pass(net: &ReluNetwork, bounds: &mut BoundSet) -> Result<(), BtError> {
    for k in 1..=net.depth() {
        for j in 0..net.layer_dims()[k] {
            let id = NodeId::new(k, j);
            let (lo, hi) = interval_bounds(net, bounds, id);
            let cur = bounds.get(id);
            let (l, u) = merge(cur, Some(lo), Some(hi), id)?;
            bounds.set(id, l, u);
        }
    }
    Ok(())
}

/// Intersects the current interval with new candidate ends.
fn merge(cur: (f64, f64), lo: Option<f64>, hi: Option<f64>, id: NodeId) -> Result<(f64, f64), BtError> {
    let mut l = cur.0;
    let mut u = cur.1;
    if let Some(v) = lo.filter(|v| v.is_finite() && *v > l) {
        l = v;
    }
    if let Some(v) = hi.filter(|v| v.is_finite() && *v < u) {
        u = v;
    }
    settle(l, u, id)
}

fn settle(l: f64, u: f64, id: NodeId) -> Result<(f64, f64), BtError> {
    if l > u {
        // Crossing by round-off on a point interval.
        if l - u <= 1e-9 * (1.0 + l.abs().max(u.abs())) {
            let m = 0.5 * (l + u);
            return Ok((m, m));
        }
        return Err(BtError::Infeasible {
            layer: id.layer,
            node: id.index,
        });
    }
    Ok((l, u))
}

/// Bounds handed to the encoding: the tracked interval, cut by the output box.
fn model_bounds(bounds: &BoundSet, output: Option<&BoxBounds>) -> Result<BoundSet, BtError> {
    let mut b = bounds.clone();
    if let Some(e) = output {
        let k = b.lower.len() - 1;
        for (j, &(el, eu)) in e.iter().enumerate() {
            let (l, u) = settle(b.lower[k][j].max(el), b.upper[k][j].min(eu), NodeId::new(k, j))?;
            b.lower[k][j] = l;
            b.upper[k][j] = u;
        }
    }
    Ok(b)
}

struct Counters {
    subproblems: usize,
    timeouts: usize,
}

/// Solves `max` and `min` of an affine expression. `None` for an infeasible
/// subproblem.
fn extremes(
    solver: &mut MilpSolver,
    expr: &(Vec<(VarId, f64)>, f64),
    params: &SolveParams,
    counters: &mut Counters,
) -> Result<Option<(f64, f64)>, BtError> {
    let mut out = [0.0; 2];
    for (slot, sense) in [Sense::Minimize, Sense::Maximize].into_iter().enumerate() {
        solver.set_objective(sense, &expr.0, expr.1)?;
        let r = solver.solve(params)?;
        counters.subproblems += 1;
        if r.status == MilpStatus::Infeasible {
            return Ok(None);
        }
        if r.stopped_by_limit() {
            counters.timeouts += 1;
        }
        out[slot] = r.best_bound;
    }
    Ok(Some((out[0], out[1])))
}

fn layer_nodes(dims: &[usize], k: usize) -> impl Iterator<Item = NodeId> + '_ {
    (0..dims[k]).map(move |j| NodeId::new(k, j))
}

/// Runs RR, SEMI-RR or NO-R over layers `0..=K` on one model that is
/// re-bounded in place as the pass proceeds.
fn persistent_pass(
    net: &ReluNetwork,
    bounds: &mut BoundSet,
    output: Option<&BoxBounds>,
    kind: BtKind,
    sp: &SolveParams,
    lp: LpOptions,
    node_times: &mut [Vec<f64>],
    counters: &mut Counters,
) -> Result<(), BtError> {
    let dims = net.layer_dims().to_vec();
    let depth = dims.len() - 1;
    let relax = match kind {
        BtKind::NoR => RelaxSpec::exact(),
        _ => RelaxSpec::all_relaxed(net),
    };
    let mut model = MilpModel::default();
    let emb = embed_network(&mut model, net, &model_bounds(bounds, output)?, &relax, None)?;
    let mut solver = MilpSolver::new(model, lp)?;
    for k in 0..=depth {
        if kind == BtKind::SemiRr && k >= 2 {
            // Layer k-1 leaves the relaxed tail.
            for id in layer_nodes(&dims, k - 1) {
                if let Some(z) = emb.z(id) {
                    solver.set_integer(z, true)?;
                }
            }
        }
        for id in layer_nodes(&dims, k) {
            let start = Instant::now();
            let expr = emb.pre_activation(id)?;
            let (lo, hi) = extremes(&mut solver, &expr, sp, counters)?.ok_or(BtError::Infeasible {
                layer: id.layer,
                node: id.index,
            })?;
            let cur = bounds.get(id);
            let (l, u) = merge(cur, Some(lo), Some(hi), id)?;
            if (l, u) != cur {
                bounds.set(id, l, u);
                let (ml, mu) = match (k == depth, output) {
                    (true, Some(e)) => settle(l.max(e[id.index].0), u.min(e[id.index].1), id)?,
                    _ => (l, u),
                };
                emb.update_solver_bounds(&mut solver, id, ml, mu)?;
            }
            node_times[k][id.index] += start.elapsed().as_secs_f64();
        }
    }
    Ok(())
}

/// LR: for each layer `k >= 1`, an exact model of layers `0..k` whose
/// objective is the pre-activation of a node in layer `k`. Nodes of one
/// layer do not constrain each other here, so one model serves the layer.
fn lr_pass(
    net: &ReluNetwork,
    bounds: &mut BoundSet,
    sp: &SolveParams,
    lp: LpOptions,
    node_times: &mut [Vec<f64>],
    counters: &mut Counters,
) -> Result<(), BtError> {
    let dims = net.layer_dims().to_vec();
    for k in 1..dims.len() {
        let start = Instant::now();
        let mut model = MilpModel::default();
        let emb: NetworkEmbedding = embed_network(&mut model, net, bounds, &RelaxSpec::truncated(net, k), None)?;
        let mut solver = MilpSolver::new(model, lp)?;
        let build = start.elapsed().as_secs_f64() / dims[k] as f64;
        for id in layer_nodes(&dims, k) {
            let start = Instant::now();
            let expr = emb.pre_activation(id)?;
            let (lo, hi) = extremes(&mut solver, &expr, sp, counters)?.ok_or(BtError::Infeasible {
                layer: id.layer,
                node: id.index,
            })?;
            let (l, u) = merge(bounds.get(id), Some(lo), Some(hi), id)?;
            bounds.set(id, l, u);
            node_times[k][id.index] += build + start.elapsed().as_secs_f64();
        }
    }
    Ok(())
}

/// Tightens bounds for inputs in the box `input` whose outputs must lie in
/// `output`. Layer 0 starts at `input`, all other layers unbounded.
///
/// The output box acts as a constraint of the subproblems; layer `K` of the
/// returned bounds holds what the scheme derives for the outputs, so schemes
/// without backward propagation report the forward range there.
pub fn tighten(
    net: &ReluNetwork,
    input: &BoxBounds,
    output: Option<&BoxBounds>,
    scheme: &BtScheme,
    params: &BtParams,
) -> Result<BtReport, BtError> {
    check_box("input", input, net.input_dim())?;
    let mut initial = BoundSet::unbounded(net.layer_dims());
    for (j, &(l, u)) in input.iter().enumerate() {
        initial.set(NodeId::new(0, j), l, u);
    }
    tighten_from(net, initial, output, scheme, params)
}

/// As [`tighten`], starting from existing valid bounds.
pub fn tighten_from(
    net: &ReluNetwork,
    initial: BoundSet,
    output: Option<&BoxBounds>,
    scheme: &BtScheme,
    params: &BtParams,
) -> Result<BtReport, BtError> {
    let start = Instant::now();
    initial.check_dims(net)?;
    initial.validate()?;
    let input: Vec<(f64, f64)> = initial.lower[0].iter().copied().zip(initial.upper[0].iter().copied()).collect();
    check_box("input", &input, net.input_dim())?;
    if let Some(e) = output {
        check_box("output", e, net.output_dim())?;
    }
    if scheme.rounds == 0 {
        return Err(BtError::Scheme("rounds must be at least 1".into()));
    }
    if scheme.subproblem_time_limit.is_some() && !scheme.kind.is_milp() {
        return Err(BtError::Scheme(format!("{} solves no MILP subproblems", scheme.kind.name())));
    }
    let mut bounds = initial;
    lrr_pass(net, &mut bounds)?;
    let lrr_time = start.elapsed().as_secs_f64();

    let sp = SolveParams {
        time_limit_seconds: scheme.subproblem_time_limit,
        gap_tolerance: params.gap_tolerance,
        lp: params.lp,
        ..SolveParams::default()
    };
    let mut node_times: Vec<Vec<f64>> = net.layer_dims().iter().map(|&n| vec![0.0; n]).collect();
    let mut counters = Counters {
        subproblems: 0,
        timeouts: 0,
    };
    for round in 0..scheme.rounds {
        match scheme.kind {
            BtKind::Lrr => {
                if round > 0 {
                    lrr_pass(net, &mut bounds)?;
                }
            }
            BtKind::Lr => lr_pass(net, &mut bounds, &sp, params.lp, &mut node_times, &mut counters)?,
            kind => persistent_pass(net, &mut bounds, output, kind, &sp, params.lp, &mut node_times, &mut counters)?,
        }
    }
    let (dead_fraction, active_fraction) = neuron_fractions(&bounds);
    let m = mad(&bounds)?;
    let exact_reference = scheme.kind == BtKind::NoR && counters.timeouts == 0;
    Ok(BtReport {
        scheme: *scheme,
        node_times,
        lrr_time,
        total_time: start.elapsed().as_secs_f64(),
        dead_fraction,
        active_fraction,
        mad: m,
        mrd: exact_reference.then_some(0.0),
        subproblems: counters.subproblems,
        subproblem_timeouts: counters.timeouts,
        bounds,
    })
}

#[cfg(test)]
mod tests;
