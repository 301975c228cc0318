//! Big-M MILP encodings of ReLU networks.
//!
//! Each hidden node `(k, j)` splits its pre-activation `t = W x + b` into
//! `t = x - s` with `x, s >= 0`; a binary `z` selects which side may be
//! nonzero through `x <= U z` and `s <= -L (1 - z)`, where `[L, U]` are the
//! node's pre-activation bounds.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::EncodeError;
use crate::lp::{Relation, Sense, VarId};
use crate::milp::{MilpModel, MilpSolver};
use crate::net::{ReluNetwork, Trace};

/// A node position: `layer` 0 is the input layer, `layer == depth` the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub layer: usize,
    pub index: usize,
}

impl NodeId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

/// Pre-activation interval bounds for every node of a network, layers 0..=K.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSet {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LayerBoundsDoc {
    #[serde(rename = "L")]
    lower: Vec<Option<f64>>,
    #[serde(rename = "U")]
    upper: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDoc {
    layers: Vec<LayerBoundsDoc>,
}

/// Interval `[lo, hi]` per coordinate.
pub type BoxBounds = [(f64, f64)];

impl BoundSet {
    pub fn new(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> Result<Self, EncodeError> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| l.len() != u.len()) {
            return Err(EncodeError::Dimension("lower and upper bounds differ in shape".into()));
        }
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Every node unbounded.
    pub fn unbounded(layer_dims: &[usize]) -> Self {
        Self {
            lower: layer_dims.iter().map(|&n| vec![f64::NEG_INFINITY; n]).collect(),
            upper: layer_dims.iter().map(|&n| vec![f64::INFINITY; n]).collect(),
        }
    }

    /// Input box on layer 0, optional output box on the last layer, hidden
    /// layers unbounded.
    pub fn from_boxes(net: &ReluNetwork, input: &BoxBounds, output: Option<&BoxBounds>) -> Result<Self, EncodeError> {
        let dims = net.layer_dims();
        let mut b = Self::unbounded(dims);
        if input.len() != net.input_dim() {
            return Err(EncodeError::Dimension(format!(
                "input box has {} intervals, network takes {}",
                input.len(),
                net.input_dim()
            )));
        }
        for (j, &(l, u)) in input.iter().enumerate() {
            b.lower[0][j] = l;
            b.upper[0][j] = u;
        }
        if let Some(out) = output {
            if out.len() != net.output_dim() {
                return Err(EncodeError::Dimension(format!(
                    "output box has {} intervals, network has {} outputs",
                    out.len(),
                    net.output_dim()
                )));
            }
            let k = dims.len() - 1;
            for (j, &(l, u)) in out.iter().enumerate() {
                b.lower[k][j] = l;
                b.upper[k][j] = u;
            }
        }
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        for (k, (ls, us)) in self.lower.iter().zip(&self.upper).enumerate() {
            for (j, (&l, &u)) in ls.iter().zip(us).enumerate() {
                if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                    return Err(EncodeError::InvertedBound {
                        layer: k,
                        node: j,
                        lower: l,
                        upper: u,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.lower.iter().map(Vec::len).collect()
    }

    pub fn check_dims(&self, net: &ReluNetwork) -> Result<(), EncodeError> {
        if self.layer_dims() != net.layer_dims() {
            return Err(EncodeError::Dimension(format!(
                "bounds shaped {:?}, network {:?}",
                self.layer_dims(),
                net.layer_dims()
            )));
        }
        Ok(())
    }

    pub fn get(&self, node: NodeId) -> (f64, f64) {
        (self.lower[node.layer][node.index], self.upper[node.layer][node.index])
    }

    pub fn set(&mut self, node: NodeId, lower: f64, upper: f64) {
        self.lower[node.layer][node.index] = lower;
        self.upper[node.layer][node.index] = upper;
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.upper).flatten().all(|v| v.is_finite())
    }

    /// First node whose trace value lies outside its interval by more than `tol`.
    pub fn violation(&self, trace: &Trace, tol: f64) -> Option<(NodeId, f64)> {
        for (k, t) in trace.pre.iter().enumerate() {
            for (j, &v) in t.iter().enumerate() {
                let (l, u) = (self.lower[k][j], self.upper[k][j]);
                if v < l - tol || v > u + tol {
                    return Some((NodeId::new(k, j), v));
                }
            }
        }
        None
    }

    pub fn to_json(&self) -> String {
        let fin = |v: f64| v.is_finite().then_some(v);
        let doc = BoundsDoc {
            layers: self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| LayerBoundsDoc {
                    lower: l.iter().copied().map(fin).collect(),
                    upper: u.iter().copied().map(fin).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("bounds serialize")
    }

    /// Parses the JSON bounds format; `null` stands for an infinite bound.
    pub fn from_json(text: &str) -> Result<Self, EncodeError> {
        let doc: BoundsDoc = serde_json::from_str(text).map_err(|e| EncodeError::Malformed(e.to_string()))?;
        let lower = doc
            .layers
            .iter()
            .map(|l| l.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
            .collect();
        let upper = doc
            .layers
            .iter()
            .map(|l| l.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
            .collect();
        Self::new(lower, upper)
    }
}

/// Which parts of the exact encoding to relax or drop.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelaxSpec {
    /// Hidden nodes whose `z` becomes continuous in `[0, 1]`.
    pub relu_relaxed: BTreeSet<NodeId>,
    /// Nodes left out of the model entirely.
    pub removed: BTreeSet<NodeId>,
}

impl RelaxSpec {
    pub fn exact() -> Self {
        Self::default()
    }

    /// Every hidden ReLU relaxed: the LP relaxation of the encoding.
    pub fn all_relaxed(net: &ReluNetwork) -> Self {
        Self::relaxed_from_layer(net, 1)
    }

    /// ReLUs of hidden layers `first..K` relaxed.
    pub fn relaxed_from_layer(net: &ReluNetwork, first: usize) -> Self {
        let dims = net.layer_dims();
        let relu_relaxed = (first.max(1)..dims.len() - 1)
            .flat_map(|k| (0..dims[k]).map(move |j| NodeId::new(k, j)))
            .collect();
        Self {
            relu_relaxed,
            removed: BTreeSet::new(),
        }
    }

    /// Keeps layers `0..keep` only.
    pub fn truncated(net: &ReluNetwork, keep: usize) -> Self {
        let dims = net.layer_dims();
        let removed = (keep..dims.len())
            .flat_map(|k| (0..dims[k]).map(move |j| NodeId::new(k, j)))
            .collect();
        Self {
            relu_relaxed: BTreeSet::new(),
            removed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingStyle {
    /// Nodes known to be active (`L >= 0`) become plain affine equalities.
    #[default]
    Compact,
    /// Every hidden node gets `x`, `s` and `z`; active nodes have `z` fixed to 1.
    Full,
}

/// Variables and rows of one hidden or output node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeVars {
    pub x: VarId,
    pub s: Option<VarId>,
    pub z: Option<VarId>,
    /// Equality row defining the node (absent for inputs).
    pub defining_row: Option<usize>,
    /// Rows `x - U z <= 0` and `s + M z <= M` with `M = -L`.
    pub big_m_rows: Option<(usize, usize)>,
}

/// Where a network lives inside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEmbedding {
    pub prefix: String,
    layer_dims: Vec<usize>,
    nodes: Vec<Vec<Option<NodeVars>>>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

/// A bound or coefficient change, applied to a model or a live solver.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Edit {
    Bounds(VarId, f64, f64),
    Coef(usize, VarId, f64),
    Rhs(usize, f64),
}

impl NetworkEmbedding {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeVars> {
        self.nodes.get(id.layer)?.get(id.index)?.as_ref()
    }

    pub fn x(&self, id: NodeId) -> Option<VarId> {
        self.node(id).map(|n| n.x)
    }

    pub fn s(&self, id: NodeId) -> Option<VarId> {
        self.node(id).and_then(|n| n.s)
    }

    pub fn z(&self, id: NodeId) -> Option<VarId> {
        self.node(id).and_then(|n| n.z)
    }

    pub fn inputs(&self) -> Vec<VarId> {
        self.nodes[0].iter().flatten().map(|n| n.x).collect()
    }

    /// Output variables, or `None` when the output layer was removed.
    pub fn outputs(&self) -> Option<Vec<VarId>> {
        self.nodes.last().unwrap().iter().map(|n| n.map(|v| v.x)).collect()
    }

    pub fn output(&self, j: usize) -> Option<VarId> {
        self.x(NodeId::new(self.layer_dims.len() - 1, j))
    }

    /// All `z` variables, integral or relaxed.
    pub fn z_vars(&self) -> Vec<VarId> {
        self.nodes.iter().flatten().flatten().filter_map(|n| n.z).collect()
    }

    /// Pre-activation `t` of a node as an affine expression over the
    /// previous layer's variables (or the input variable itself in layer 0).
    /// Requires the previous layer to be present.
    pub fn pre_activation(&self, id: NodeId) -> Result<(Vec<(VarId, f64)>, f64), EncodeError> {
        if id.layer == 0 {
            let x = self
                .x(id)
                .ok_or_else(|| EncodeError::Dangling(format!("input {} not in model", id.index)))?;
            return Ok((vec![(x, 1.0)], 0.0));
        }
        let k = id.layer;
        let row = &self.weights[k - 1][id.index];
        let mut terms = Vec::with_capacity(row.len());
        for (i, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let prev = self.x(NodeId::new(k - 1, i)).ok_or_else(|| {
                EncodeError::Dangling(format!("node ({i},{}) feeds ({},{k}) but was removed", k - 1, id.index))
            })?;
            terms.push((prev, w));
        }
        Ok((terms, self.biases[k - 1][id.index]))
    }

    fn edits(&self, id: NodeId, lower: f64, upper: f64) -> Result<Vec<Edit>, EncodeError> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(EncodeError::InvertedBound {
                layer: id.layer,
                node: id.index,
                lower,
                upper,
            });
        }
        let Some(node) = self.node(id) else {
            return Ok(Vec::new());
        };
        let last = self.layer_dims.len() - 1;
        if id.layer == 0 || id.layer == last || node.s.is_none() {
            if node.s.is_none() && id.layer != 0 && id.layer != last && lower < 0.0 {
                return Err(EncodeError::Dimension(format!(
                    "node ({},{}) was encoded as active and cannot take a negative lower bound",
                    id.index, id.layer
                )));
            }
            return Ok(vec![Edit::Bounds(node.x, lower, upper)]);
        }
        if !lower.is_finite() || !upper.is_finite() {
            return Err(EncodeError::InfiniteBound {
                layer: id.layer,
                node: id.index,
            });
        }
        Ok(hidden_edits(node, lower, upper))
    }

    /// Rewrites the node's variable boxes and big-M coefficients for new
    /// bounds in a model under construction.
    pub fn update_node_bounds(&self, model: &mut MilpModel, id: NodeId, lower: f64, upper: f64) -> Result<(), EncodeError> {
        for e in self.edits(id, lower, upper)? {
            match e {
                Edit::Bounds(v, l, u) => model.base.set_bounds(v, l, u)?,
                Edit::Coef(r, v, c) => model.base.set_coefficient(r, v, c)?,
                Edit::Rhs(r, c) => model.base.set_rhs(r, c)?,
            }
        }
        Ok(())
    }

    /// As [`Self::update_node_bounds`], on a live solver.
    pub fn update_solver_bounds(&self, solver: &mut MilpSolver, id: NodeId, lower: f64, upper: f64) -> Result<(), EncodeError> {
        for e in self.edits(id, lower, upper)? {
            match e {
                Edit::Bounds(v, l, u) => solver.set_bounds(v, l, u)?,
                Edit::Coef(r, v, c) => solver.set_coefficient(r, v, c)?,
                Edit::Rhs(r, c) => solver.set_rhs(r, c)?,
            }
        }
        Ok(())
    }
}

/// Variable boxes `max{0,L} <= x <= max{0,U}`, `max{0,-U} <= s <= max{0,-L}`,
/// `z` fixed when the sign of `t` is known, and big-M coefficients.
fn hidden_edits(node: &NodeVars, lower: f64, upper: f64) -> Vec<Edit> {
    let s = node.s.expect("hidden node with slack");
    let z = node.z.expect("hidden node with indicator");
    let (up_row, lo_row) = node.big_m_rows.expect("hidden node with big-M rows");
    let m_up = upper.max(0.0);
    let m_lo = (-lower).max(0.0);
    let (zl, zu) = if upper <= 0.0 {
        (0.0, 0.0)
    } else if lower >= 0.0 {
        (1.0, 1.0)
    } else {
        (0.0, 1.0)
    };
    vec![
        Edit::Bounds(node.x, lower.max(0.0), m_up),
        Edit::Bounds(s, (-upper).max(0.0), m_lo),
        Edit::Bounds(z, zl, zu),
        Edit::Coef(up_row, z, -m_up),
        Edit::Coef(lo_row, z, m_lo),
        Edit::Rhs(lo_row, m_lo),
    ]
}

fn apply_edits(model: &mut MilpModel, edits: &[Edit]) -> Result<(), EncodeError> {
    for &e in edits {
        match e {
            Edit::Bounds(v, l, u) => model.base.set_bounds(v, l, u)?,
            Edit::Coef(r, v, c) => model.base.set_coefficient(r, v, c)?,
            Edit::Rhs(r, c) => model.base.set_rhs(r, c)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EmbedOptions {
    /// Variables are named `net{index}_x_{k}_{j}` and so on.
    pub index: usize,
    pub style: EncodingStyle,
}

/// Embeds `net` with the default naming (`net0_...`) and compact style.
pub fn embed_network(
    model: &mut MilpModel,
    net: &ReluNetwork,
    bounds: &BoundSet,
    relax: &RelaxSpec,
    inputs: Option<&[VarId]>,
) -> Result<NetworkEmbedding, EncodeError> {
    embed_network_with(model, net, bounds, relax, inputs, &EmbedOptions::default())
}

/// Adds the encoding of `net` to `model`. With `inputs`, the network reads
/// existing variables whose boxes are intersected with the layer-0 bounds.
pub fn embed_network_with(
    model: &mut MilpModel,
    net: &ReluNetwork,
    bounds: &BoundSet,
    relax: &RelaxSpec,
    inputs: Option<&[VarId]>,
    opts: &EmbedOptions,
) -> Result<NetworkEmbedding, EncodeError> {
    bounds.check_dims(net)?;
    bounds.validate()?;
    let dims = net.layer_dims().to_vec();
    let depth = dims.len() - 1;
    let prefix = format!("net{}", opts.index);
    for n in relax.relu_relaxed.iter().chain(&relax.removed) {
        if n.layer > depth || n.index >= dims[n.layer] {
            return Err(EncodeError::Dimension(format!("node ({},{}) is not in the network", n.index, n.layer)));
        }
    }
    if let Some(n) = relax.relu_relaxed.iter().find(|n| n.layer == 0 || n.layer == depth) {
        return Err(EncodeError::Dimension(format!(
            "only hidden ReLUs can be relaxed, got ({},{})",
            n.index, n.layer
        )));
    }
    let mut emb = NetworkEmbedding {
        prefix: prefix.clone(),
        layer_dims: dims.clone(),
        nodes: dims.iter().map(|&n| vec![None; n]).collect(),
        weights: net
            .layers()
            .iter()
            .map(|l| (0..l.outputs()).map(|i| l.row(i).to_vec()).collect())
            .collect(),
        biases: net.layers().iter().map(|l| l.bias().to_vec()).collect(),
    };

    if let Some(shared) = inputs {
        if shared.len() != dims[0] {
            return Err(EncodeError::Dimension(format!(
                "{} shared inputs for a network with {} inputs",
                shared.len(),
                dims[0]
            )));
        }
    }
    for j in 0..dims[0] {
        let id = NodeId::new(0, j);
        if relax.removed.contains(&id) {
            continue;
        }
        let (l, u) = bounds.get(id);
        let x = match inputs {
            Some(shared) => {
                let v = shared[j];
                if v.0 >= model.base.num_vars() {
                    return Err(EncodeError::Dangling(format!("shared input variable {}", v.0)));
                }
                let cur = model.base.variable(v).clone();
                let (nl, nu) = (cur.lower.max(l), cur.upper.min(u));
                if nl > nu {
                    return Err(EncodeError::InvertedBound {
                        layer: 0,
                        node: j,
                        lower: nl,
                        upper: nu,
                    });
                }
                model.base.set_bounds(v, nl, nu)?;
                v
            }
            None => model.base.add_var(format!("{prefix}_x_0_{j}"), l, u)?,
        };
        emb.nodes[0][j] = Some(NodeVars {
            x,
            s: None,
            z: None,
            defining_row: None,
            big_m_rows: None,
        });
    }

    for k in 1..=depth {
        for j in 0..dims[k] {
            let id = NodeId::new(k, j);
            if relax.removed.contains(&id) {
                continue;
            }
            let (terms, bias) = emb.pre_activation(id)?;
            let (l, u) = bounds.get(id);
            let x_name = format!("{prefix}_x_{k}_{j}");
            if k == depth {
                let x = model.base.add_var(x_name, l, u)?;
                let mut row = terms;
                row.push((x, -1.0));
                let r = model.base.add_constraint(&row, Relation::Eq, -bias)?;
                emb.nodes[k][j] = Some(NodeVars {
                    x,
                    s: None,
                    z: None,
                    defining_row: Some(r),
                    big_m_rows: None,
                });
                continue;
            }
            if !l.is_finite() || !u.is_finite() {
                return Err(EncodeError::InfiniteBound { layer: k, node: j });
            }
            if opts.style == EncodingStyle::Compact && l >= 0.0 {
                let x = model.base.add_var(x_name, l, u)?;
                let mut row = terms;
                row.push((x, -1.0));
                let r = model.base.add_constraint(&row, Relation::Eq, -bias)?;
                emb.nodes[k][j] = Some(NodeVars {
                    x,
                    s: None,
                    z: None,
                    defining_row: Some(r),
                    big_m_rows: None,
                });
                continue;
            }
            let x = model.base.add_var(x_name, 0.0, 0.0)?;
            let s = model.base.add_var(format!("{prefix}_s_{k}_{j}"), 0.0, 0.0)?;
            let z = model.base.add_var(format!("{prefix}_z_{k}_{j}"), 0.0, 1.0)?;
            if !relax.relu_relaxed.contains(&id) {
                model.mark_binary(z)?;
            }
            let mut row = terms;
            row.push((x, -1.0));
            row.push((s, 1.0));
            let r = model.base.add_constraint(&row, Relation::Eq, -bias)?;
            let up_row = model.base.add_constraint(&[(x, 1.0), (z, -1.0)], Relation::Le, 0.0)?;
            let lo_row = model.base.add_constraint(&[(s, 1.0), (z, 1.0)], Relation::Le, 1.0)?;
            let node = NodeVars {
                x,
                s: Some(s),
                z: Some(z),
                defining_row: Some(r),
                big_m_rows: Some((up_row, lo_row)),
            };
            apply_edits(model, &hidden_edits(&node, l, u))?;
            emb.nodes[k][j] = Some(node);
        }
    }
    Ok(emb)
}

/// Upper envelope of the relaxed ReLU over `[L, U]` with `L < 0 < U`.
pub fn relu_relaxation_upper(pre: f64, lower: f64, upper: f64) -> Result<f64, EncodeError> {
    if !(lower < 0.0 && upper > 0.0) {
        return Err(EncodeError::DegenerateRelu { lower, upper });
    }
    Ok(upper * (pre - lower) / (upper - lower))
}

/// How a network's inputs attach to the model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum InputWiring {
    /// Fresh input variables `net{i}_x_0_{j}`.
    #[default]
    Fresh,
    /// Existing variables, by name (extra variables or another net's).
    Shared(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct NetSpec<'a> {
    pub net: &'a ReluNetwork,
    pub bounds: &'a BoundSet,
    pub relax: RelaxSpec,
    pub inputs: InputWiring,
    pub style: EncodingStyle,
}

impl<'a> NetSpec<'a> {
    pub fn new(net: &'a ReluNetwork, bounds: &'a BoundSet) -> Self {
        Self {
            net,
            bounds,
            relax: RelaxSpec::exact(),
            inputs: InputWiring::Fresh,
            style: EncodingStyle::Compact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

/// Linear row over variables referenced by name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedConstraint {
    pub terms: Vec<(String, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedObjective {
    pub sense: Sense,
    pub terms: Vec<(String, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec<'a> {
    pub nets: Vec<NetSpec<'a>>,
    pub extra_vars: Vec<ExtraVar>,
    pub constraints: Vec<NamedConstraint>,
    pub objective: NamedObjective,
}

fn resolve(model: &MilpModel, names: &[(String, f64)]) -> Result<Vec<(VarId, f64)>, EncodeError> {
    names
        .iter()
        .map(|(n, c)| {
            model
                .base
                .var(n)
                .map(|v| (v, *c))
                .ok_or_else(|| EncodeError::Dangling(format!("unknown variable {n}")))
        })
        .collect()
}

/// Builds one model from several networks plus extra variables, rows and an
/// objective. Extra variables are created first so networks can read them.
pub fn build_problem(spec: &ProblemSpec<'_>) -> Result<(MilpModel, Vec<NetworkEmbedding>), EncodeError> {
    let mut model = MilpModel::default();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for v in &spec.extra_vars {
        if seen.insert(v.name.as_str(), ()).is_some() || v.name.starts_with("net") && v.name.contains("_x_") {
            return Err(EncodeError::NameCollision(v.name.clone()));
        }
        let id = model.base.add_var(v.name.clone(), v.lower, v.upper)?;
        if v.binary {
            model.mark_binary(id)?;
        }
    }
    let mut embeddings = Vec::with_capacity(spec.nets.len());
    for (i, ns) in spec.nets.iter().enumerate() {
        let inputs = match &ns.inputs {
            InputWiring::Fresh => None,
            InputWiring::Shared(names) => Some(
                names
                    .iter()
                    .map(|n| {
                        model
                            .base
                            .var(n)
                            .ok_or_else(|| EncodeError::Dangling(format!("unknown input variable {n}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let opts = EmbedOptions { index: i, style: ns.style };
        embeddings.push(embed_network_with(&mut model, ns.net, ns.bounds, &ns.relax, inputs.as_deref(), &opts)?);
    }
    for c in &spec.constraints {
        let terms = resolve(&model, &c.terms)?;
        model.base.add_constraint(&terms, c.relation, c.rhs)?;
    }
    let obj = resolve(&model, &spec.objective.terms)?;
    model.base.set_objective(spec.objective.sense, &obj, spec.objective.constant)?;
    Ok((model, embeddings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, LpStatus};
    use crate::milp::{solve_milp, MilpStatus, SolveParams};
    use crate::net::fixtures::abs_net;
    use crate::net::he_initialize;
    use crate::rng;
    use rand::Rng as _;

    /// Plain interval propagation, kept independent of the bt module.
    fn interval_bounds(net: &ReluNetwork, input: &[(f64, f64)]) -> BoundSet {
        let mut b = BoundSet::from_boxes(net, input, None).unwrap();
        for k in 1..=net.depth() {
            let layer = net.layer(k);
            for j in 0..layer.outputs() {
                let (mut lo, mut hi) = (layer.bias()[j], layer.bias()[j]);
                for (i, &w) in layer.row(j).iter().enumerate() {
                    let (mut l, mut u) = (b.lower[k - 1][i], b.upper[k - 1][i]);
                    if k > 1 {
                        l = l.max(0.0);
                        u = u.max(0.0);
                    }
                    lo += (w * l).min(w * u);
                    hi += (w * l).max(w * u);
                }
                b.set(NodeId::new(k, j), lo, hi);
            }
        }
        b
    }

    fn single_node() -> ReluNetwork {
        ReluNetwork::from_rows(vec![(vec![vec![1.0]], vec![0.0]), (vec![vec![1.0]], vec![0.0])]).unwrap()
    }

    fn bounds_for(net: &ReluNetwork, hidden: (f64, f64)) -> BoundSet {
        let mut b = BoundSet::from_boxes(net, &[(-10.0, 10.0)], None).unwrap();
        b.set(NodeId::new(1, 0), hidden.0, hidden.1);
        b
    }

    #[test]
    fn single_unstable_node() {
        let net = single_node();
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &bounds_for(&net, (-2.0, 3.0)), &RelaxSpec::exact(), None).unwrap();
        let n = NodeId::new(1, 0);
        let (x, s, z) = (e.x(n).unwrap(), e.s(n).unwrap(), e.z(n).unwrap());
        assert_eq!((m.base.variable(x).lower, m.base.variable(x).upper), (0.0, 3.0));
        assert_eq!((m.base.variable(s).lower, m.base.variable(s).upper), (0.0, 2.0));
        assert!(m.is_binary(z));
        let (up, lo) = e.node(n).unwrap().big_m_rows.unwrap();
        // x <= 3 z
        let c = &m.base.constraints()[up];
        assert_eq!(c.relation, Relation::Le);
        assert_eq!(c.rhs, 0.0);
        assert!(c.coeffs.contains(&(x, 1.0)) && c.coeffs.contains(&(z, -3.0)));
        // s <= 2 (1 - z)
        let c = &m.base.constraints()[lo];
        assert_eq!(c.rhs, 2.0);
        assert!(c.coeffs.contains(&(s, 1.0)) && c.coeffs.contains(&(z, 2.0)));
    }

    #[test]
    fn dead_node() {
        let net = single_node();
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &bounds_for(&net, (-5.0, -1.0)), &RelaxSpec::exact(), None).unwrap();
        let n = NodeId::new(1, 0);
        let v = |id: VarId| (m.base.variable(id).lower, m.base.variable(id).upper);
        assert_eq!(v(e.z(n).unwrap()), (0.0, 0.0));
        assert_eq!(v(e.x(n).unwrap()), (0.0, 0.0));
        assert_eq!(v(e.s(n).unwrap()), (1.0, 5.0));
    }

    #[test]
    fn active_node_styles() {
        let net = single_node();
        let b = bounds_for(&net, (1.0, 4.0));
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
        let n = NodeId::new(1, 0);
        assert!(e.z(n).is_none() && e.s(n).is_none());
        assert_eq!(m.binaries().len(), 0);
        let mut m = MilpModel::default();
        let opts = EmbedOptions {
            index: 0,
            style: EncodingStyle::Full,
        };
        let e = embed_network_with(&mut m, &net, &b, &RelaxSpec::exact(), None, &opts).unwrap();
        let v = |id: VarId| (m.base.variable(id).lower, m.base.variable(id).upper);
        assert_eq!(v(e.z(n).unwrap()), (1.0, 1.0));
        assert_eq!(v(e.s(n).unwrap()), (0.0, 0.0));
        assert_eq!(m.binaries().len(), 1);
    }

    #[test]
    fn rejects_infinite_and_inverted_bounds() {
        let net = single_node();
        let mut m = MilpModel::default();
        let b = BoundSet::from_boxes(&net, &[(-1.0, 1.0)], None).unwrap();
        assert!(matches!(
            embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None),
            Err(EncodeError::InfiniteBound { layer: 1, node: 0 })
        ));
        assert!(BoundSet::new(vec![vec![1.0]], vec![vec![0.0]]).is_err());
        let wrong = BoundSet::unbounded(&[2, 1, 1]);
        assert!(matches!(
            embed_network(&mut m, &net, &wrong, &RelaxSpec::exact(), None),
            Err(EncodeError::Dimension(_))
        ));
    }

    #[test]
    fn names_follow_scheme() {
        let net = abs_net();
        let mut m = MilpModel::default();
        let b = interval_bounds(&net, &[(-1.0, 1.0)]);
        embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
        for name in ["net0_x_0_0", "net0_x_1_1", "net0_s_1_0", "net0_z_1_1", "net0_x_2_0"] {
            assert!(m.base.var(name).is_some(), "{name}");
        }
    }

    fn fix_inputs(m: &mut MilpModel, e: &NetworkEmbedding, x: &[f64]) {
        for (v, &val) in e.inputs().iter().zip(x) {
            m.base.set_bounds(*v, val, val).unwrap();
        }
    }

    #[test]
    fn abs_net_exactness() {
        let net = abs_net();
        let b = interval_bounds(&net, &[(-1.0, 1.0)]);
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
        fix_inputs(&mut m, &e, &[0.5]);
        let r = solve_milp(&m, &SolveParams::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        let y = r.incumbent.unwrap()[e.output(0).unwrap().0];
        assert!((y - 0.5).abs() < 1e-9);
    }

    #[test]
    fn exactness_on_random_networks() {
        let mut r = rng::stream(11, "exact");
        for seed in 0..10 {
            let dims = [r.random_range(1..=3), r.random_range(1..=6), r.random_range(1..=6), 1];
            let net = he_initialize(&dims, seed).unwrap();
            let input: Vec<(f64, f64)> = vec![(-1.0, 1.0); dims[0]];
            let b = interval_bounds(&net, &input);
            for _ in 0..5 {
                let x: Vec<f64> = (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect();
                let mut m = MilpModel::default();
                let e = embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
                fix_inputs(&mut m, &e, &x);
                let out = e.output(0).unwrap();
                m.base.set_objective(Sense::Maximize, &[(out, 1.0)], 0.0).unwrap();
                let res = solve_milp(&m, &SolveParams::default()).unwrap();
                let y = res.incumbent.unwrap()[out.0];
                assert!((y - net.forward(&x).unwrap()[0]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn relaxations_dominate() {
        for seed in 0..15 {
            let net = he_initialize(&[2, 5, 4, 1], seed).unwrap();
            let b = interval_bounds(&net, &[(-1.0, 1.0), (-1.0, 1.0)]);
            let solve = |relax: RelaxSpec| {
                let mut m = MilpModel::default();
                let e = embed_network(&mut m, &net, &b, &relax, None).unwrap();
                let out = e.output(0).unwrap();
                m.base.set_objective(Sense::Maximize, &[(out, 1.0)], 0.0).unwrap();
                let r = solve_milp(&m, &SolveParams::default()).unwrap();
                let x = r.incumbent.clone().unwrap();
                assert!(m.base.max_violation(&x) <= 1e-7);
                (r.objective_value.unwrap(), m)
            };
            let (exact, m) = solve(RelaxSpec::exact());
            let (partial, _) = solve(RelaxSpec::relaxed_from_layer(&net, 2));
            let (full, _) = solve(RelaxSpec::all_relaxed(&net));
            assert!(partial >= exact - 1e-9);
            assert!(full >= partial - 1e-9);
            let lp = solve_lp(&m.base).unwrap();
            assert_eq!(lp.status, LpStatus::Optimal);
            assert!((lp.objective_value - full).abs() <= 1e-7);
        }
    }

    #[test]
    fn degenerate_node_allows_both_indicator_values() {
        // Single hidden node with t = x0; at x0 = 0 either z works.
        let net = single_node();
        let b = bounds_for(&net, (-10.0, 10.0));
        for zval in [0.0, 1.0] {
            let mut m = MilpModel::default();
            let e = embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
            fix_inputs(&mut m, &e, &[0.0]);
            let z = e.z(NodeId::new(1, 0)).unwrap();
            m.base.set_bounds(z, zval, zval).unwrap();
            let r = solve_milp(&m, &SolveParams::default()).unwrap();
            assert_eq!(r.status, MilpStatus::Optimal);
            assert_eq!(r.incumbent.unwrap()[e.output(0).unwrap().0], 0.0);
        }
    }

    #[test]
    fn layer_removal_and_dangling() {
        let net = he_initialize(&[2, 3, 3, 1], 4).unwrap();
        let b = interval_bounds(&net, &[(-1.0, 1.0), (-1.0, 1.0)]);
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &b, &RelaxSpec::truncated(&net, 2), None).unwrap();
        assert!(e.outputs().is_none());
        assert!(e.x(NodeId::new(2, 0)).is_none());
        let (terms, _) = e.pre_activation(NodeId::new(2, 1)).unwrap();
        assert_eq!(terms.len(), 3);
        let mut relax = RelaxSpec::exact();
        relax.removed.insert(NodeId::new(1, 0));
        let mut m = MilpModel::default();
        assert!(matches!(
            embed_network(&mut m, &net, &b, &relax, None),
            Err(EncodeError::Dangling(_))
        ));
    }

    #[test]
    fn in_place_updates_match_rebuild() {
        let net = he_initialize(&[2, 4, 1], 9).unwrap();
        let b = interval_bounds(&net, &[(-1.0, 1.0), (-1.0, 1.0)]);
        let mut m = MilpModel::default();
        let e = embed_network(&mut m, &net, &b, &RelaxSpec::exact(), None).unwrap();
        let mut tighter = b.clone();
        for j in 0..4 {
            let id = NodeId::new(1, j);
            let (l, u) = b.get(id);
            if l < 0.0 {
                let nl = l * 0.5;
                let nu = u * 0.7;
                tighter.set(id, nl, nu);
                e.update_node_bounds(&mut m, id, nl, nu).unwrap();
            }
        }
        let mut fresh = MilpModel::default();
        embed_network(&mut fresh, &net, &tighter, &RelaxSpec::exact(), None).unwrap();
        for (a, b) in m.base.variables().iter().zip(fresh.base.variables()) {
            assert_eq!(a, b);
        }
        for (a, b) in m.base.constraints().iter().zip(fresh.base.constraints()) {
            let mut ca = a.coeffs.clone();
            let mut cb = b.coeffs.clone();
            ca.sort_by_key(|t| t.0);
            cb.sort_by_key(|t| t.0);
            assert_eq!((ca, a.rhs), (cb, b.rhs));
        }
    }

    #[test]
    fn relaxation_envelope() {
        assert_eq!(relu_relaxation_upper(0.0, -2.0, 2.0).unwrap(), 1.0);
        assert_eq!(relu_relaxation_upper(-3.0, -3.0, 5.0).unwrap(), 0.0);
        assert_eq!(relu_relaxation_upper(5.0, -3.0, 5.0).unwrap(), 5.0);
        assert!(relu_relaxation_upper(1.0, 0.0, 2.0).is_err());
        assert!(relu_relaxation_upper(-1.0, -2.0, 0.0).is_err());
    }

    #[test]
    fn bounds_json_round_trip() {
        let mut b = BoundSet::unbounded(&[1, 2, 1]);
        b.set(NodeId::new(0, 0), -1.0, 1.0);
        b.set(NodeId::new(1, 1), 0.1, 0.30000000000000004);
        let text = b.to_json();
        assert!(text.contains("null"));
        assert_eq!(BoundSet::from_json(&text).unwrap(), b);
        assert!(BoundSet::from_json(r#"{"layers":[{"L":[1],"U":[0]}]}"#).is_err());
        assert!(BoundSet::from_json(r#"{"layers":[{"L":[1,2],"U":[3]}]}"#).is_err());
        assert!(BoundSet::from_json("nope").is_err());
    }

    #[test]
    fn shared_inputs_and_problem_building() {
        let net = abs_net();
        let b = interval_bounds(&net, &[(-1.0, 1.0)]);
        let mut narrow = b.clone();
        narrow.set(NodeId::new(0, 0), -0.5, 2.0);
        let spec = ProblemSpec {
            nets: vec![
                NetSpec::new(&net, &b),
                NetSpec {
                    inputs: InputWiring::Shared(vec!["net0_x_0_0".into()]),
                    ..NetSpec::new(&net, &narrow)
                },
            ],
            extra_vars: vec![ExtraVar {
                name: "slack".into(),
                lower: 0.0,
                upper: 5.0,
                binary: false,
            }],
            constraints: vec![NamedConstraint {
                terms: vec![("net1_x_2_0".into(), 1.0), ("slack".into(), -1.0)],
                relation: Relation::Eq,
                rhs: 0.0,
            }],
            objective: NamedObjective {
                sense: Sense::Minimize,
                terms: vec![("net0_x_0_0".into(), 1.0)],
                constant: 0.0,
            },
        };
        let (m, embs) = build_problem(&spec).unwrap();
        assert_eq!(embs[0].inputs(), embs[1].inputs());
        let v = m.base.variable(embs[0].inputs()[0]);
        assert_eq!((v.lower, v.upper), (-0.5, 1.0));
        let r = solve_milp(&m, &SolveParams::default()).unwrap();
        assert!((r.objective_value.unwrap() + 0.5).abs() < 1e-9);

        let mut bad = spec.clone();
        bad.constraints[0].terms[0].0 = "missing".into();
        assert!(matches!(build_problem(&bad), Err(EncodeError::Dangling(_))));
        let mut bad = spec.clone();
        bad.extra_vars.push(bad.extra_vars[0].clone());
        assert!(matches!(build_problem(&bad), Err(EncodeError::NameCollision(_))));
        let mut bad = spec;
        bad.extra_vars[0].name = "net0_x_0_0".into();
        assert!(matches!(build_problem(&bad), Err(EncodeError::NameCollision(_))));
    }

    #[test]
    fn single_net_problem_matches_direct_embedding() {
        let net = he_initialize(&[2, 4, 3, 1], 2).unwrap();
        let b = interval_bounds(&net, &[(-1.0, 1.0), (-1.0, 1.0)]);
        let spec = ProblemSpec {
            nets: vec![NetSpec::new(&net, &b)],
            extra_vars: vec![],
            constraints: vec![],
            objective: NamedObjective {
                sense: Sense::Maximize,
                terms: vec![("net0_x_3_0".into(), 1.0)],
                constant: 0.0,
            },
        };
        let (m, _) = build_problem(&spec).unwrap();
        let mut direct = MilpModel::default();
        embed_network(&mut direct, &net, &b, &RelaxSpec::exact(), None).unwrap();
        assert_eq!(m.base.num_constraints(), direct.base.num_constraints());
        assert_eq!(m.base.num_vars(), direct.base.num_vars());
    }
}
