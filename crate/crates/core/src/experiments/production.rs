//! Production routing: wells feed manifolds through switchable pipelines,
//! manifolds feed separators through risers. Well curves and riser pressure
//! drops are ReLU networks embedded in one MILP that maximizes oil.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::bt::{tighten, BtParams, BtReport, BtScheme};
use crate::encode::{
    build_problem, BoundSet, EncodingStyle, ExtraVar, InputWiring, NamedConstraint, NamedObjective, NetSpec,
    NetworkEmbedding, ProblemSpec,
};
use crate::error::ExperimentError;
use crate::lp::{Relation, Sense};
use crate::milp::MilpModel;
use crate::net::{he_initialize, LabeledDataset, ReluNetwork};
use crate::rng;
use crate::trainer::{sgd_train, TrainConfig};
use rand::Rng as _;

pub const PHASES: [&str; 3] = ["oil", "gas", "wat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    Well { gor: f64, wor: f64 },
    Manifold,
    Separator { pressure: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProdNode {
    pub name: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    pub p_lower: f64,
    pub p_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Discrete,
    Riser,
}

/// Edge between node indices, with per-phase flow bounds in [`PHASES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProdEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub q_lower: [f64; 3],
    pub q_upper: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionTopology {
    pub nodes: Vec<ProdNode>,
    pub edges: Vec<ProdEdge>,
}

fn topo_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Topology(msg.into())
}

impl ProductionTopology {
    pub fn wells(&self) -> Vec<usize> {
        self.indices(|k| matches!(k, NodeKind::Well { .. }))
    }

    pub fn manifolds(&self) -> Vec<usize> {
        self.indices(|k| matches!(k, NodeKind::Manifold))
    }

    pub fn separators(&self) -> Vec<usize> {
        self.indices(|k| matches!(k, NodeKind::Separator { .. }))
    }

    fn indices(&self, f: impl Fn(&NodeKind) -> bool) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| f(&self.nodes[i].kind)).collect()
    }

    pub fn discrete_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].kind == EdgeKind::Discrete).collect()
    }

    pub fn risers(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].kind == EdgeKind::Riser).collect()
    }

    pub fn edges_out(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].from == node).collect()
    }

    pub fn edges_in(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].to == node).collect()
    }

    pub fn edge_name(&self, e: usize) -> String {
        let edge = &self.edges[e];
        format!("{}_{}", self.nodes[edge.from].name, self.nodes[edge.to].name)
    }

    /// Checks the graph shape: wells route through one or two discrete edges
    /// into manifolds, each manifold drains through risers into separators,
    /// and the graph is acyclic.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let mut names = HashSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(topo_err(format!("duplicate node name {}", n.name)));
            }
            if n.name.is_empty() || !n.name.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(topo_err(format!("node name {:?} must be alphanumeric", n.name)));
            }
            if !(n.p_lower <= n.p_upper) || !n.p_lower.is_finite() || !n.p_upper.is_finite() {
                return Err(topo_err(format!("pressure bounds of {} are invalid", n.name)));
            }
            match n.kind {
                NodeKind::Separator { pressure } if !(n.p_lower <= pressure && pressure <= n.p_upper) => {
                    return Err(topo_err(format!("separator pressure of {} is outside its bounds", n.name)));
                }
                NodeKind::Well { gor, wor } if !(gor >= 0.0 && wor >= 0.0) => {
                    return Err(topo_err(format!("well {} has negative phase ratios", n.name)));
                }
                _ => {}
            }
        }
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.from >= self.nodes.len() || edge.to >= self.nodes.len() {
                return Err(topo_err(format!("edge {e} references a missing node")));
            }
            for c in 0..3 {
                let (l, u) = (edge.q_lower[c], edge.q_upper[c]);
                if !(l <= u) || !l.is_finite() || !u.is_finite() {
                    return Err(topo_err(format!("flow bounds of edge {} are invalid", self.edge_name(e))));
                }
                if edge.kind == EdgeKind::Discrete && l < 0.0 {
                    return Err(topo_err(format!("discrete edge {} allows negative flow", self.edge_name(e))));
                }
            }
            let from = &self.nodes[edge.from].kind;
            let to = &self.nodes[edge.to].kind;
            match edge.kind {
                EdgeKind::Discrete => {
                    if !matches!(from, NodeKind::Well { .. }) || !matches!(to, NodeKind::Manifold) {
                        return Err(topo_err(format!(
                            "discrete edge {} must run from a well to a manifold",
                            self.edge_name(e)
                        )));
                    }
                }
                EdgeKind::Riser => {
                    if !matches!(from, NodeKind::Manifold) || !matches!(to, NodeKind::Separator { .. }) {
                        return Err(topo_err(format!(
                            "riser {} must run from a manifold to a separator",
                            self.edge_name(e)
                        )));
                    }
                }
            }
        }
        for w in self.wells() {
            let out = self.edges_out(w).len();
            if !(1..=2).contains(&out) {
                return Err(topo_err(format!("well {} has {out} leaving edges", self.nodes[w].name)));
            }
        }
        for m in self.manifolds() {
            if self.edges_out(m).len() != 1 {
                return Err(topo_err(format!("manifold {} needs exactly one riser", self.nodes[m].name)));
            }
        }
        // Every edge goes well -> manifold -> separator, so cycles are
        // impossible once the kinds check out.
        Ok(())
    }
}

/// Input box of each well network (well pressure) and each riser network
/// (riser flows and manifold pressure), plus the riser output singletons.
#[derive(Debug, Clone, PartialEq)]
pub struct NetBoxes {
    pub wells: Vec<Vec<(f64, f64)>>,
    pub risers: Vec<Vec<(f64, f64)>>,
    pub riser_outputs: Vec<(f64, f64)>,
}

pub fn net_boxes(topo: &ProductionTopology) -> Result<NetBoxes, ExperimentError> {
    topo.validate()?;
    let wells = topo
        .wells()
        .iter()
        .map(|&w| vec![(topo.nodes[w].p_lower, topo.nodes[w].p_upper)])
        .collect();
    let mut risers = Vec::new();
    let mut riser_outputs = Vec::new();
    for e in topo.risers() {
        let edge = &topo.edges[e];
        let m = &topo.nodes[edge.from];
        let mut b: Vec<(f64, f64)> = (0..3).map(|c| (edge.q_lower[c], edge.q_upper[c])).collect();
        b.push((m.p_lower, m.p_upper));
        risers.push(b);
        let NodeKind::Separator { pressure } = topo.nodes[edge.to].kind else {
            unreachable!("validated riser end");
        };
        riser_outputs.push((pressure, pressure));
    }
    Ok(NetBoxes {
        wells,
        risers,
        riser_outputs,
    })
}

#[derive(Debug, Clone)]
pub struct ProductionInstance {
    pub topology: ProductionTopology,
    pub well_nets: Vec<ReluNetwork>,
    pub riser_nets: Vec<ReluNetwork>,
}

impl ProductionInstance {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.topology.validate()?;
        let (nw, nr) = (self.topology.wells().len(), self.topology.risers().len());
        if self.well_nets.len() != nw || self.riser_nets.len() != nr {
            return Err(ExperimentError::Config(format!(
                "{nw} wells and {nr} risers need as many networks, got {} and {}",
                self.well_nets.len(),
                self.riser_nets.len()
            )));
        }
        for n in &self.well_nets {
            if n.input_dim() != 1 || n.output_dim() != 1 {
                return Err(ExperimentError::Config(format!("well network {:?} must map 1 -> 1", n.layer_dims())));
            }
        }
        for n in &self.riser_nets {
            if n.input_dim() != 4 || n.output_dim() != 1 {
                return Err(ExperimentError::Config(format!("riser network {:?} must map 4 -> 1", n.layer_dims())));
            }
        }
        Ok(())
    }
}

/// Bounds per network from one scheme, with the riser outputs fixed at the
/// separator pressures.
#[derive(Debug, Clone)]
pub struct ProductionBounds {
    pub wells: Vec<BoundSet>,
    pub risers: Vec<BoundSet>,
    pub reports: Vec<BtReport>,
}

pub fn tighten_production(
    inst: &ProductionInstance,
    scheme: &BtScheme,
    params: &BtParams,
) -> Result<ProductionBounds, ExperimentError> {
    inst.validate()?;
    let boxes = net_boxes(&inst.topology)?;
    let mut reports = Vec::new();
    let mut wells = Vec::new();
    for (net, d) in inst.well_nets.iter().zip(&boxes.wells) {
        let r = tighten(net, d, None, scheme, params)?;
        wells.push(r.bounds.clone());
        reports.push(r);
    }
    let mut risers = Vec::new();
    for ((net, d), e) in inst.riser_nets.iter().zip(&boxes.risers).zip(&boxes.riser_outputs) {
        let r = tighten(net, d, Some(std::slice::from_ref(e)), scheme, params)?;
        risers.push(r.bounds.clone());
        reports.push(r);
    }
    Ok(ProductionBounds { wells, risers, reports })
}

pub fn p_var(topo: &ProductionTopology, node: usize) -> String {
    format!("p_{}", topo.nodes[node].name)
}

pub fn q_var(topo: &ProductionTopology, edge: usize, phase: usize) -> String {
    format!("q_{}_{}", topo.edge_name(edge), PHASES[phase])
}

pub fn y_var(topo: &ProductionTopology, edge: usize) -> String {
    format!("y_{}", topo.edge_name(edge))
}

#[derive(Debug, Clone)]
pub struct ProductionModel {
    pub model: MilpModel,
    /// Well networks first, then risers.
    pub embeddings: Vec<NetworkEmbedding>,
}

fn row(terms: Vec<(String, f64)>, relation: Relation, rhs: f64) -> NamedConstraint {
    NamedConstraint { terms, relation, rhs }
}

/// The routing MILP. Riser outputs are pinned to the separator pressures
/// through their output bounds.
pub fn build_production_model(
    inst: &ProductionInstance,
    bounds: &ProductionBounds,
    style: EncodingStyle,
) -> Result<ProductionModel, ExperimentError> {
    inst.validate()?;
    let topo = &inst.topology;
    let wells = topo.wells();
    let risers = topo.risers();
    let discrete = topo.discrete_edges();
    if bounds.wells.len() != wells.len() || bounds.risers.len() != risers.len() {
        return Err(ExperimentError::Config("one bound set per network is required".into()));
    }

    let mut extra = Vec::new();
    for (i, n) in topo.nodes.iter().enumerate() {
        let (l, u) = match n.kind {
            NodeKind::Separator { pressure } => (pressure, pressure),
            _ => (n.p_lower, n.p_upper),
        };
        extra.push(ExtraVar {
            name: p_var(topo, i),
            lower: l,
            upper: u,
            binary: false,
        });
    }
    for (e, edge) in topo.edges.iter().enumerate() {
        for c in 0..3 {
            let (l, u) = match edge.kind {
                EdgeKind::Discrete => (edge.q_lower[c].min(0.0), edge.q_upper[c].max(0.0)),
                EdgeKind::Riser => (edge.q_lower[c], edge.q_upper[c]),
            };
            extra.push(ExtraVar {
                name: q_var(topo, e, c),
                lower: l,
                upper: u,
                binary: false,
            });
        }
    }
    for &e in &discrete {
        extra.push(ExtraVar {
            name: y_var(topo, e),
            lower: 0.0,
            upper: 1.0,
            binary: true,
        });
    }

    let mut rows = Vec::new();
    // mass balance at manifolds
    for m in topo.manifolds() {
        for c in 0..3 {
            let mut t: Vec<(String, f64)> = topo.edges_in(m).into_iter().map(|e| (q_var(topo, e, c), 1.0)).collect();
            t.extend(topo.edges_out(m).into_iter().map(|e| (q_var(topo, e, c), -1.0)));
            rows.push(row(t, Relation::Eq, 0.0));
        }
    }
    // no pressure drop over open pipelines, big-M otherwise
    for &e in &discrete {
        let edge = &topo.edges[e];
        let (a, b) = (&topo.nodes[edge.from], &topo.nodes[edge.to]);
        let (pi, pj, y) = (p_var(topo, edge.from), p_var(topo, edge.to), y_var(topo, e));
        let up = a.p_upper - b.p_lower;
        let lo = a.p_lower - b.p_upper;
        rows.push(row(vec![(pi.clone(), 1.0), (pj.clone(), -1.0), (y.clone(), up)], Relation::Le, up));
        rows.push(row(vec![(pi, 1.0), (pj, -1.0), (y, lo)], Relation::Ge, lo));
    }
    // at most one open pipeline per well
    for &w in &wells {
        let t = topo.edges_out(w).into_iter().map(|e| (y_var(topo, e), 1.0)).collect();
        rows.push(row(t, Relation::Le, 1.0));
    }
    // flow only through open pipelines
    for &e in &discrete {
        let edge = &topo.edges[e];
        for c in 0..3 {
            let (q, y) = (q_var(topo, e, c), y_var(topo, e));
            rows.push(row(vec![(q.clone(), 1.0), (y.clone(), -edge.q_lower[c])], Relation::Ge, 0.0));
            rows.push(row(vec![(q, 1.0), (y, -edge.q_upper[c])], Relation::Le, 0.0));
        }
    }
    // well curves and phase ratios
    for (k, &w) in wells.iter().enumerate() {
        let NodeKind::Well { gor, wor } = topo.nodes[w].kind else {
            unreachable!("well kind");
        };
        let out = topo.edges_out(w);
        let oil = |coef: f64| out.iter().map(move |&e| (q_var(topo, e, 0), coef));
        let mut t: Vec<(String, f64)> = oil(1.0).collect();
        t.push((format!("net{k}_x_{}_0", inst.well_nets[k].depth()), -1.0));
        rows.push(row(t, Relation::Eq, 0.0));
        for (c, ratio) in [(1, gor), (2, wor)] {
            let mut t: Vec<(String, f64)> = out.iter().map(|&e| (q_var(topo, e, c), 1.0)).collect();
            t.extend(oil(-ratio));
            rows.push(row(t, Relation::Eq, 0.0));
        }
    }
    // separator pressure from the riser network
    for (r, &e) in risers.iter().enumerate() {
        let idx = wells.len() + r;
        rows.push(row(
            vec![
                (format!("net{idx}_x_{}_0", inst.riser_nets[r].depth()), 1.0),
                (p_var(topo, topo.edges[e].to), -1.0),
            ],
            Relation::Eq,
            0.0,
        ));
    }

    let riser_bounds: Vec<BoundSet> = risers
        .iter()
        .zip(&bounds.risers)
        .zip(&inst.riser_nets)
        .map(|((&e, b), net)| {
            let NodeKind::Separator { pressure } = topo.nodes[topo.edges[e].to].kind else {
                unreachable!("validated riser end");
            };
            let mut b = b.clone();
            let k = net.depth();
            b.lower[k][0] = pressure;
            b.upper[k][0] = pressure;
            b
        })
        .collect();
    let mut nets = Vec::new();
    for (k, &w) in wells.iter().enumerate() {
        nets.push(NetSpec {
            inputs: InputWiring::Shared(vec![p_var(topo, w)]),
            style,
            ..NetSpec::new(&inst.well_nets[k], &bounds.wells[k])
        });
    }
    for (r, &e) in risers.iter().enumerate() {
        let mut names: Vec<String> = (0..3).map(|c| q_var(topo, e, c)).collect();
        names.push(p_var(topo, topo.edges[e].from));
        nets.push(NetSpec {
            inputs: InputWiring::Shared(names),
            style,
            ..NetSpec::new(&inst.riser_nets[r], &riser_bounds[r])
        });
    }
    let objective = NamedObjective {
        sense: Sense::Maximize,
        terms: risers.iter().map(|&e| (q_var(topo, e, 0), 1.0)).collect(),
        constant: 0.0,
    };
    let (model, embeddings) = build_problem(&ProblemSpec {
        nets,
        extra_vars: extra,
        constraints: rows,
        objective,
    })?;
    Ok(ProductionModel { model, embeddings })
}

/// Physical reading of a model solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductionPlan {
    pub oil: f64,
    pub pressures: Vec<(String, f64)>,
    pub open: Vec<String>,
    pub flows: Vec<(String, [f64; 3])>,
}

impl ProductionModel {
    pub fn plan(&self, topo: &ProductionTopology, x: &[f64]) -> Result<ProductionPlan, ExperimentError> {
        let get = |name: &str| -> Result<f64, ExperimentError> {
            let v = self
                .model
                .base
                .var(name)
                .ok_or_else(|| ExperimentError::Config(format!("missing variable {name}")))?;
            x.get(v.0).copied().ok_or_else(|| ExperimentError::Config("solution is too short".into()))
        };
        let mut pressures = Vec::new();
        for i in 0..topo.nodes.len() {
            pressures.push((topo.nodes[i].name.clone(), get(&p_var(topo, i))?));
        }
        let mut flows = Vec::new();
        for e in 0..topo.edges.len() {
            let mut q = [0.0; 3];
            for (c, slot) in q.iter_mut().enumerate() {
                *slot = get(&q_var(topo, e, c))?;
            }
            flows.push((topo.edge_name(e), q));
        }
        let mut open = Vec::new();
        for e in topo.discrete_edges() {
            if get(&y_var(topo, e))? > 0.5 {
                open.push(topo.edge_name(e));
            }
        }
        let oil = topo.risers().iter().map(|&e| flows[e].1[0]).sum();
        Ok(ProductionPlan {
            oil,
            pressures,
            open,
            flows,
        })
    }
}

/// Largest violation of mass balance, routing and riser physics at a plan,
/// evaluating the riser networks directly.
pub fn plan_violations(inst: &ProductionInstance, plan: &ProductionPlan) -> Result<PlanViolations, ExperimentError> {
    let topo = &inst.topology;
    let mut balance: f64 = 0.0;
    for m in topo.manifolds() {
        for c in 0..3 {
            let inflow: f64 = topo.edges_in(m).iter().map(|&e| plan.flows[e].1[c]).sum();
            let outflow: f64 = topo.edges_out(m).iter().map(|&e| plan.flows[e].1[c]).sum();
            balance = balance.max((inflow - outflow).abs());
        }
    }
    let mut max_open = 0;
    for w in topo.wells() {
        let open = topo
            .edges_out(w)
            .iter()
            .filter(|&&e| plan.open.contains(&topo.edge_name(e)))
            .count();
        max_open = max_open.max(open);
    }
    let mut riser: f64 = 0.0;
    for (r, e) in topo.risers().into_iter().enumerate() {
        let edge = &topo.edges[e];
        let q = plan.flows[e].1;
        let y = inst.riser_nets[r].forward(&[q[0], q[1], q[2], plan.pressures[edge.from].1])?[0];
        riser = riser.max((y - plan.pressures[edge.to].1).abs());
    }
    Ok(PlanViolations {
        balance,
        max_open_per_well: max_open,
        riser,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanViolations {
    pub balance: f64,
    pub max_open_per_well: usize,
    pub riser: f64,
}

/// `a - b*p - c*relu(p - knee)`; zero at `p = (a + c*knee) / (b + c)` when past the knee.
pub fn well_curve_net(a: f64, b: f64, c: f64, knee: f64) -> ReluNetwork {
    ReluNetwork::from_rows(vec![
        (vec![vec![1.0], vec![1.0]], vec![0.0, -knee]),
        (vec![vec![-b, -c]], vec![a]),
    ])
    .expect("fixed shape")
}

/// `p - (k . q) - m*relu(q_oil + q_wat - knee)` for flows `q = (oil, gas, wat)`.
pub fn riser_drop_net(k: [f64; 3], m: f64, knee: f64) -> ReluNetwork {
    ReluNetwork::from_rows(vec![
        (
            vec![vec![0.0, 0.0, 0.0, 1.0], vec![k[0], k[1], k[2], 0.0], vec![1.0, 0.0, 1.0, 0.0]],
            vec![0.0, 0.0, -knee],
        ),
        (vec![vec![1.0, -1.0, -m]], vec![0.0]),
    ])
    .expect("fixed shape")
}

fn well(name: &str, gor: f64, wor: f64, p: (f64, f64)) -> ProdNode {
    ProdNode {
        name: name.into(),
        kind: NodeKind::Well { gor, wor },
        p_lower: p.0,
        p_upper: p.1,
    }
}

fn plain(name: &str, kind: NodeKind, p: (f64, f64)) -> ProdNode {
    ProdNode {
        name: name.into(),
        kind,
        p_lower: p.0,
        p_upper: p.1,
    }
}

fn edge(from: usize, to: usize, kind: EdgeKind, q_upper: [f64; 3]) -> ProdEdge {
    ProdEdge {
        from,
        to,
        kind,
        q_lower: [0.0; 3],
        q_upper,
    }
}

/// Two wells sharing one manifold and riser, with hand-built piecewise-linear
/// curves. Each well shuts in at its upper pressure.
pub fn tiny_instance() -> ProductionInstance {
    let topology = ProductionTopology {
        nodes: vec![
            well("w1", 1.5, 0.5, (20.0, 100.0)),
            well("w2", 0.8, 1.0, (20.0, 100.0)),
            plain("m1", NodeKind::Manifold, (20.0, 80.0)),
            plain("s1", NodeKind::Separator { pressure: 20.0 }, (20.0, 20.0)),
        ],
        edges: vec![
            edge(0, 2, EdgeKind::Discrete, [100.0, 200.0, 200.0]),
            edge(1, 2, EdgeKind::Discrete, [100.0, 200.0, 200.0]),
            edge(2, 3, EdgeKind::Riser, [300.0, 300.0, 300.0]),
        ],
    };
    ProductionInstance {
        topology,
        well_nets: vec![well_curve_net(70.0, 0.5, 0.5, 60.0), well_curve_net(75.0, 0.3, 0.9, 50.0)],
        riser_nets: vec![riser_drop_net([0.2, 0.05, 0.1], 0.3, 80.0)],
    }
}

/// Eight wells, each with pipelines to both of two manifolds, and one riser
/// per manifold.
pub fn field_topology() -> ProductionTopology {
    let mut nodes = Vec::new();
    for i in 0..8 {
        let gor = 0.8 + 0.1 * i as f64;
        let wor = 0.3 + 0.05 * i as f64;
        nodes.push(well(&format!("w{}", i + 1), gor, wor, (20.0, 100.0 + 5.0 * i as f64)));
    }
    nodes.push(plain("m1", NodeKind::Manifold, (20.0, 90.0)));
    nodes.push(plain("m2", NodeKind::Manifold, (20.0, 90.0)));
    nodes.push(plain("s1", NodeKind::Separator { pressure: 20.0 }, (15.0, 25.0)));
    nodes.push(plain("s2", NodeKind::Separator { pressure: 22.0 }, (15.0, 25.0)));
    let mut edges = Vec::new();
    for i in 0..8 {
        edges.push(edge(i, 8, EdgeKind::Discrete, [60.0, 150.0, 100.0]));
        edges.push(edge(i, 9, EdgeKind::Discrete, [60.0, 150.0, 100.0]));
    }
    edges.push(edge(8, 10, EdgeKind::Riser, [300.0, 600.0, 400.0]));
    edges.push(edge(9, 11, EdgeKind::Riser, [300.0, 600.0, 400.0]));
    ProductionTopology { nodes, edges }
}

pub const SHALLOW_WELL: [usize; 4] = [1, 20, 20, 1];
pub const SHALLOW_RISER: [usize; 4] = [4, 50, 50, 1];
pub const DEEP_WELL: [usize; 6] = [1, 10, 10, 10, 10, 1];
pub const DEEP_RISER: [usize; 7] = [4, 20, 20, 20, 20, 20, 1];

/// Untrained networks of the given shapes for every well and riser.
pub fn initialized_instance(
    topology: ProductionTopology,
    well_dims: &[usize],
    riser_dims: &[usize],
    seed: u64,
) -> Result<ProductionInstance, ExperimentError> {
    let nw = topology.wells().len();
    let nr = topology.risers().len();
    let well_nets = (0..nw)
        .map(|i| he_initialize(well_dims, seed + i as u64))
        .collect::<Result<_, _>>()?;
    let riser_nets = (0..nr)
        .map(|i| he_initialize(riser_dims, seed + (nw + i) as u64))
        .collect::<Result<_, _>>()?;
    Ok(ProductionInstance {
        topology,
        well_nets,
        riser_nets,
    })
}

/// Synthetic well rate `a - b*p`, shutting in at the well's upper pressure.
fn synthetic_well(node: &ProdNode, seed: u64, index: usize) -> (f64, f64) {
    let mut r = rng::stream(seed, &format!("well-{index}"));
    let peak = r.random_range(30.0..60.0);
    let b = peak / (node.p_upper - node.p_lower);
    (b * node.p_upper, b)
}

/// Synthetic separator pressure: inlet pressure minus a linear drop and a
/// softplus-shaped friction term.
fn synthetic_riser(q: &[f64], seed: u64, index: usize) -> f64 {
    let mut r = rng::stream(seed, &format!("riser-{index}"));
    let k = [r.random_range(0.05..0.1), r.random_range(0.01..0.03), r.random_range(0.03..0.06)];
    let liquid = q[0] + q[2];
    let softplus = 20.0 * (1.0 + ((liquid - 250.0) / 20.0).exp()).ln();
    q[3] - k[0] * q[0] - k[1] * q[1] - k[2] * q[2] - 0.1 * softplus
}

/// Samples the synthetic curves over each network's input box and fits the
/// given architectures. Slow for the full-size topology.
pub fn trained_instance(
    topology: ProductionTopology,
    well_dims: &[usize],
    riser_dims: &[usize],
    seed: u64,
    config: &TrainConfig,
) -> Result<ProductionInstance, ExperimentError> {
    let boxes = net_boxes(&topology)?;
    let mut well_nets = Vec::new();
    for (i, &w) in topology.wells().iter().enumerate() {
        let (a, b) = synthetic_well(&topology.nodes[w], seed, i);
        let (lo, hi) = boxes.wells[i][0];
        let xs: Vec<Vec<f64>> = (0..50).map(|s| vec![lo + (hi - lo) * s as f64 / 49.0]).collect();
        let ys = xs.iter().map(|x| vec![a - b * x[0]]).collect();
        let data = LabeledDataset::new(xs, ys)?;
        let init = he_initialize(well_dims, seed + i as u64)?;
        well_nets.push(sgd_train(&init, &data, &TrainConfig { seed: seed + i as u64, ..*config })?);
    }
    let mut riser_nets = Vec::new();
    for (i, d) in boxes.risers.iter().enumerate() {
        let mut r = rng::stream(seed, &format!("riser-samples-{i}"));
        let xs: Vec<Vec<f64>> = (0..4000)
            .map(|_| d.iter().map(|&(l, u)| r.random_range(l..=u)).collect())
            .collect();
        let ys = xs.iter().map(|x| vec![synthetic_riser(x, seed, i)]).collect();
        let data = LabeledDataset::new(xs, ys)?;
        let init = he_initialize(riser_dims, seed + 100 + i as u64)?;
        riser_nets.push(sgd_train(&init, &data, &TrainConfig { seed: seed + 100 + i as u64, ..*config })?);
    }
    Ok(ProductionInstance {
        topology,
        well_nets,
        riser_nets,
    })
}

/// Exhaustive routing search: every open/closed pattern, then a scan with
/// bisection of each manifold pressure for the riser equation. Closed wells
/// must be able to shut in, i.e. reach zero rate inside their pressure box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingSearch {
    pub density: usize,
    pub tolerance: f64,
}

impl Default for RoutingSearch {
    fn default() -> Self {
        Self {
            density: 100_000,
            tolerance: 1e-9,
        }
    }
}

impl RoutingSearch {
    /// Best total oil, or `None` if no pattern is feasible.
    pub fn solve(&self, inst: &ProductionInstance) -> Result<Option<f64>, ExperimentError> {
        inst.validate()?;
        let topo = &inst.topology;
        let wells = topo.wells();
        let discrete = topo.discrete_edges();
        if discrete.len() > 20 {
            return Err(ExperimentError::Config(format!("{} routing bits is too many", discrete.len())));
        }
        let mut best: Option<f64> = None;
        'pattern: for mask in 0u32..(1u32 << discrete.len()) {
            let open: Vec<usize> = (0..discrete.len()).filter(|b| mask >> b & 1 == 1).map(|b| discrete[b]).collect();
            for (k, &w) in wells.iter().enumerate() {
                let n = topo.edges_out(w).iter().filter(|e| open.contains(e)).count();
                if n > 1 {
                    continue 'pattern;
                }
                if n == 0 && !self.can_shut_in(&inst.well_nets[k], &topo.nodes[w])? {
                    continue 'pattern;
                }
            }
            let mut total = 0.0;
            for (r, e) in topo.risers().into_iter().enumerate() {
                let m = topo.edges[e].from;
                let feeders: Vec<(usize, usize)> = open
                    .iter()
                    .filter(|&&d| topo.edges[d].to == m)
                    .map(|&d| (d, wells.iter().position(|&w| w == topo.edges[d].from).expect("well edge")))
                    .collect();
                match self.best_manifold_pressure(inst, r, e, &feeders)? {
                    Some(v) => total += v,
                    None => continue 'pattern,
                }
            }
            best = Some(best.map_or(total, |b: f64| b.max(total)));
        }
        Ok(best)
    }

    fn can_shut_in(&self, net: &ReluNetwork, node: &ProdNode) -> Result<bool, ExperimentError> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..=self.density {
            let p = node.p_lower + (node.p_upper - node.p_lower) * s as f64 / self.density as f64;
            let v = net.forward(&[p])?[0];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(lo <= self.tolerance && hi >= -self.tolerance)
    }

    /// Oil through one riser, maximized over manifold pressures that satisfy
    /// the riser equation with the open feeders' flows.
    fn best_manifold_pressure(
        &self,
        inst: &ProductionInstance,
        r: usize,
        riser: usize,
        feeders: &[(usize, usize)],
    ) -> Result<Option<f64>, ExperimentError> {
        let topo = &inst.topology;
        let edge = &topo.edges[riser];
        let NodeKind::Separator { pressure } = topo.nodes[edge.to].kind else {
            unreachable!("validated riser end");
        };
        let m = &topo.nodes[edge.from];
        let mut lo = m.p_lower;
        let mut hi = m.p_upper;
        for &(d, _) in feeders {
            let w = &topo.nodes[topo.edges[d].from];
            lo = lo.max(w.p_lower);
            hi = hi.min(w.p_upper);
        }
        if lo > hi {
            return Ok(None);
        }
        // Flows through the riser at manifold pressure p, or None when a
        // pipeline or riser flow bound is violated.
        let flows = |p: f64| -> Result<Option<[f64; 3]>, ExperimentError> {
            let mut q = [0.0; 3];
            for &(d, k) in feeders {
                let NodeKind::Well { gor, wor } = topo.nodes[topo.edges[d].from].kind else {
                    unreachable!("well kind");
                };
                let oil = inst.well_nets[k].forward(&[p])?[0];
                let f = [oil, gor * oil, wor * oil];
                for c in 0..3 {
                    let de = &topo.edges[d];
                    if f[c] < de.q_lower[c] - self.tolerance || f[c] > de.q_upper[c] + self.tolerance {
                        return Ok(None);
                    }
                    q[c] += f[c];
                }
            }
            for c in 0..3 {
                if q[c] < edge.q_lower[c] - self.tolerance || q[c] > edge.q_upper[c] + self.tolerance {
                    return Ok(None);
                }
            }
            Ok(Some(q))
        };
        let residual = |p: f64, q: [f64; 3]| -> Result<f64, ExperimentError> {
            Ok(inst.riser_nets[r].forward(&[q[0], q[1], q[2], p])?[0] - pressure)
        };
        let h = |p: f64| -> Result<Option<f64>, ExperimentError> {
            match flows(p)? {
                Some(q) => Ok(Some(residual(p, q)?)),
                None => Ok(None),
            }
        };
        let mut best: Option<f64> = None;
        let mut consider = |p: f64| -> Result<(), ExperimentError> {
            if let Some(q) = flows(p)? {
                if residual(p, q)?.abs() <= 1e-7 {
                    best = Some(best.map_or(q[0], |b: f64| b.max(q[0])));
                }
            }
            Ok(())
        };
        let n = if lo == hi { 0 } else { self.density };
        let at = |s: usize| if n == 0 { lo } else { lo + (hi - lo) * s as f64 / n as f64 };
        let mut prev: Option<(f64, f64)> = None;
        for s in 0..=n {
            let p = at(s);
            let v = h(p)?;
            if let Some(v) = v {
                if v == 0.0 {
                    consider(p)?;
                }
                if let Some((pp, pv)) = prev {
                    if pv * v < 0.0 {
                        let (mut a, mut b, mut va) = (pp, p, pv);
                        for _ in 0..100 {
                            let mid = 0.5 * (a + b);
                            let vm = match h(mid)? {
                                Some(vm) => vm,
                                None => break,
                            };
                            if vm == 0.0 {
                                a = mid;
                                b = mid;
                                break;
                            }
                            if (vm < 0.0) == (va < 0.0) {
                                a = mid;
                                va = vm;
                            } else {
                                b = mid;
                            }
                        }
                        consider(0.5 * (a + b))?;
                    }
                }
            }
            prev = v.map(|v| (p, v));
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::BtKind;
    use crate::milp::{solve_milp, MilpStatus, SolveParams};

    fn bounds(inst: &ProductionInstance, kind: BtKind) -> ProductionBounds {
        tighten_production(inst, &BtScheme::new(kind), &BtParams::default()).unwrap()
    }

    #[test]
    fn hand_built_curves() {
        let w = well_curve_net(70.0, 0.5, 0.5, 60.0);
        assert_eq!(w.forward(&[20.0]).unwrap()[0], 60.0);
        assert_eq!(w.forward(&[100.0]).unwrap()[0], 0.0);
        let r = riser_drop_net([0.2, 0.05, 0.1], 0.3, 80.0);
        // 50 - (2 + 1 + 2) - 0.3 * 0
        assert!((r.forward(&[10.0, 20.0, 20.0, 50.0]).unwrap()[0] - 45.0).abs() < 1e-12);
        // 50 - (20 + 1 + 5) - 0.3 * 70
        assert!((r.forward(&[100.0, 20.0, 50.0, 50.0]).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn topology_checks() {
        tiny_instance().topology.validate().unwrap();
        field_topology().validate().unwrap();
        let mut t = tiny_instance().topology;
        t.edges[2].to = 0;
        assert!(matches!(t.validate(), Err(ExperimentError::Topology(_))));
        let mut t = tiny_instance().topology;
        t.edges.push(edge(0, 2, EdgeKind::Discrete, [1.0; 3]));
        t.edges.push(edge(0, 2, EdgeKind::Discrete, [1.0; 3]));
        assert!(t.validate().is_err());
        let mut t = tiny_instance().topology;
        t.nodes[3].kind = NodeKind::Separator { pressure: 5.0 };
        assert!(t.validate().is_err());
        let mut inst = tiny_instance();
        inst.riser_nets[0] = well_curve_net(1.0, 1.0, 1.0, 1.0);
        assert!(inst.validate().is_err());
    }

    #[test]
    fn field_topology_binary_count() {
        let inst = initialized_instance(field_topology(), &SHALLOW_WELL, &SHALLOW_RISER, 0).unwrap();
        let b = bounds(&inst, BtKind::Lrr);
        let pm = build_production_model(&inst, &b, EncodingStyle::Full).unwrap();
        assert_eq!(pm.model.binaries().len(), 536);
        let inst = initialized_instance(field_topology(), &DEEP_WELL, &DEEP_RISER, 0).unwrap();
        let b = bounds(&inst, BtKind::Lrr);
        let pm = build_production_model(&inst, &b, EncodingStyle::Full).unwrap();
        assert_eq!(pm.model.binaries().len(), 536);
    }

    #[test]
    fn tiny_instance_matches_routing_search() {
        let inst = tiny_instance();
        let want = RoutingSearch::default().solve(&inst).unwrap().unwrap();
        for kind in [BtKind::Lrr, BtKind::NoR] {
            let b = bounds(&inst, kind);
            let pm = build_production_model(&inst, &b, EncodingStyle::Compact).unwrap();
            let params = SolveParams {
                gap_tolerance: 1e-6,
                ..SolveParams::default()
            };
            let r = solve_milp(&pm.model, &params).unwrap();
            assert_eq!(r.status, MilpStatus::Optimal);
            let got = r.objective_value.unwrap();
            assert!((got - want).abs() <= 1e-3, "{kind:?}: {got} vs {want}");
            let plan = pm.plan(&inst.topology, r.incumbent.as_ref().unwrap()).unwrap();
            assert!((plan.oil - got).abs() < 1e-6);
            let v = plan_violations(&inst, &plan).unwrap();
            assert!(v.balance <= 1e-6 && v.max_open_per_well <= 1 && v.riser <= 1e-5, "{v:?}");
        }
    }

    #[test]
    fn closed_routing_produces_nothing() {
        let inst = tiny_instance();
        let b = bounds(&inst, BtKind::Lrr);
        let mut pm = build_production_model(&inst, &b, EncodingStyle::Compact).unwrap();
        for e in inst.topology.discrete_edges() {
            let y = pm.model.base.var(&y_var(&inst.topology, e)).unwrap();
            pm.model.base.set_bounds(y, 0.0, 0.0).unwrap();
        }
        let r = solve_milp(&pm.model, &SolveParams::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert!(r.objective_value.unwrap().abs() <= 1e-9);
    }

    #[test]
    fn topology_round_trips_through_json() {
        let t = field_topology();
        let text = serde_json::to_string(&t).unwrap();
        let back: ProductionTopology = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
