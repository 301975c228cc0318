//! Branch and bound over binary variables.
//!
//! One simplex tableau is shared by the whole search; every node re-solves it
//! from the previous basis after resetting the branched bounds.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::MilpError;
use crate::lp::{LinearModel, LpOptions, LpStatus, Sense, Simplex, VarId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    pub base: LinearModel,
    binaries: BTreeSet<VarId>,
}

impl MilpModel {
    pub fn new(base: LinearModel) -> Self {
        Self {
            base,
            binaries: BTreeSet::new(),
        }
    }

    /// Adds a fresh `{0,1}` variable.
    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId, MilpError> {
        let id = self.base.add_var(name, 0.0, 1.0)?;
        self.binaries.insert(id);
        Ok(id)
    }

    /// Marks an existing variable as binary; its bounds must lie in `[0, 1]`.
    pub fn mark_binary(&mut self, id: VarId) -> Result<(), MilpError> {
        if id.0 >= self.base.num_vars() {
            return Err(MilpError::InvalidModel(format!("unknown variable {}", id.0)));
        }
        let v = self.base.variable(id);
        if v.lower < 0.0 || v.upper > 1.0 {
            return Err(MilpError::InvalidModel(format!("binary {} has bounds outside [0, 1]", v.name)));
        }
        self.binaries.insert(id);
        Ok(())
    }

    /// Drops the integrality requirement, leaving a continuous `[0,1]` variable.
    pub fn relax_binary(&mut self, id: VarId) {
        self.binaries.remove(&id);
    }

    pub fn binaries(&self) -> &BTreeSet<VarId> {
        &self.binaries
    }

    pub fn is_binary(&self, id: VarId) -> bool {
        self.binaries.contains(&id)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for &b in &self.binaries {
            let v = self.base.variable(b);
            if v.lower < 0.0 || v.upper > 1.0 {
                return Err(MilpError::InvalidModel(format!("binary {} has bounds outside [0, 1]", v.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub time_limit_seconds: Option<f64>,
    /// Relative gap at which the search stops.
    pub gap_tolerance: f64,
    pub integrality_tolerance: f64,
    /// Stops after this many nodes, reporting like a time limit.
    pub node_limit: Option<usize>,
    pub lp: LpOptions,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            time_limit_seconds: None,
            gap_tolerance: 1e-6,
            integrality_tolerance: 1e-6,
            node_limit: None,
            lp: LpOptions::default(),
        }
    }
}

impl SolveParams {
    pub fn with_time_limit(seconds: Option<f64>) -> Self {
        Self {
            time_limit_seconds: seconds,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), MilpError> {
        let ok = self.time_limit_seconds.is_none_or(|t| t >= 0.0)
            && self.gap_tolerance >= 0.0
            && self.integrality_tolerance >= 0.0
            && self.integrality_tolerance < 0.5;
        if ok {
            Ok(())
        } else {
            Err(MilpError::InvalidModel("solve parameters must be nonnegative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MilpStatus {
    Optimal,
    /// Stopped by a limit with an incumbent.
    Feasible,
    Infeasible,
    /// Stopped by a limit before any incumbent was found.
    BoundOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub incumbent: Option<Vec<f64>>,
    pub objective_value: Option<f64>,
    /// Valid dual bound: no feasible point is better than this.
    pub best_bound: f64,
    pub gap: f64,
    pub node_count: usize,
    pub wall_time: f64,
}

impl MilpResult {
    pub fn stopped_by_limit(&self) -> bool {
        matches!(self.status, MilpStatus::Feasible | MilpStatus::BoundOnly)
    }
}

pub fn relative_gap(best_bound: f64, objective: f64) -> f64 {
    (best_bound - objective).abs() / objective.abs().max(1e-10)
}

pub fn solve_milp(model: &MilpModel, params: &SolveParams) -> Result<MilpResult, MilpError> {
    MilpSolver::new(model.clone(), params.lp)?.solve(params)
}

#[derive(Debug, Clone)]
struct Node {
    /// Lower bound on the (minimization-form) objective.
    bound: f64,
    id: usize,
    fixes: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// A MILP model with a persistent LP tableau, so that a sequence of closely
/// related solves (as in bound tightening) can reuse bases.
#[derive(Debug, Clone)]
pub struct MilpSolver {
    model: MilpModel,
    simplex: Simplex,
}

impl MilpSolver {
    pub fn new(model: MilpModel, lp: LpOptions) -> Result<Self, MilpError> {
        model.validate()?;
        let simplex = Simplex::new(&model.base, lp)?;
        Ok(Self { model, simplex })
    }

    pub fn model(&self) -> &MilpModel {
        &self.model
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) -> Result<(), MilpError> {
        if self.model.is_binary(id) && (lower < 0.0 || upper > 1.0) {
            return Err(MilpError::InvalidModel("binary bounds must stay in [0, 1]".into()));
        }
        self.model.base.set_bounds(id, lower, upper)?;
        self.simplex.set_var_bounds(id.0, lower, upper);
        Ok(())
    }

    pub fn set_coefficient(&mut self, row: usize, id: VarId, value: f64) -> Result<(), MilpError> {
        self.model.base.set_coefficient(row, id, value)?;
        self.simplex.set_coefficient(row, id.0, value);
        Ok(())
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) -> Result<(), MilpError> {
        self.model.base.set_rhs(row, rhs)?;
        self.simplex.set_rhs(row, rhs);
        Ok(())
    }

    pub fn set_objective(&mut self, sense: Sense, coeffs: &[(VarId, f64)], constant: f64) -> Result<(), MilpError> {
        self.model.base.set_objective(sense, coeffs, constant)?;
        let o = self.model.base.objective();
        self.simplex.set_objective(o.sense, &o.coeffs, o.constant);
        Ok(())
    }

    pub fn set_integer(&mut self, id: VarId, integer: bool) -> Result<(), MilpError> {
        if integer {
            self.model.mark_binary(id)
        } else {
            self.model.relax_binary(id);
            Ok(())
        }
    }

    pub fn solve(&mut self, params: &SolveParams) -> Result<MilpResult, MilpError> {
        params.validate()?;
        let start = Instant::now();
        let sign = match self.model.base.objective().sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let binaries: Vec<usize> = self.model.binaries.iter().map(|v| v.0).collect();
        let root: Vec<(f64, f64)> = binaries.iter().map(|&j| self.simplex.var_bounds(j)).collect();
        let mut search = Search {
            solver: self,
            params,
            start,
            sign,
            binaries,
            root,
            incumbent: None,
            incumbent_value: f64::INFINITY,
            pruned_floor: f64::INFINITY,
            nodes: 0,
            next_id: 1,
            dirty: Vec::new(),
        };
        let result = search.run();
        search.restore();
        result
    }
}

struct Search<'a> {
    solver: &'a mut MilpSolver,
    params: &'a SolveParams,
    start: Instant,
    sign: f64,
    binaries: Vec<usize>,
    root: Vec<(f64, f64)>,
    incumbent: Option<Vec<f64>>,
    incumbent_value: f64,
    /// Smallest bound among nodes pruned within the gap tolerance.
    pruned_floor: f64,
    nodes: usize,
    next_id: usize,
    /// Positions (into `binaries`) whose bounds differ from the root.
    dirty: Vec<usize>,
}

enum Outcome {
    Infeasible,
    Pruned,
    Integral,
    Branch { bound: f64, pos: usize, value: f64 },
}

impl Search<'_> {
    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn out_of_budget(&self) -> bool {
        self.params.time_limit_seconds.is_some_and(|t| self.elapsed() >= t)
            || self.params.node_limit.is_some_and(|n| self.nodes >= n)
    }

    fn prune_level(&self) -> f64 {
        if self.incumbent.is_none() {
            return f64::INFINITY;
        }
        let inc = self.incumbent_value;
        inc - self.params.gap_tolerance * inc.abs().max(1e-10)
    }

    fn restore(&mut self) {
        for pos in self.dirty.drain(..) {
            let (l, u) = self.root[pos];
            self.solver.simplex.set_var_bounds(self.binaries[pos], l, u);
        }
    }

    fn apply(&mut self, fixes: &[(usize, f64)]) {
        self.restore();
        for &(pos, v) in fixes {
            self.solver.simplex.set_var_bounds(self.binaries[pos], v, v);
            self.dirty.push(pos);
        }
    }

    fn lp(&mut self) -> Result<Option<f64>, MilpError> {
        match self.solver.simplex.solve()? {
            LpStatus::Optimal => Ok(Some(self.sign * self.solver.simplex.objective_value())),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(MilpError::Unbounded),
        }
    }

    /// Solves the LP at a node and decides what to do with it.
    fn evaluate(&mut self, parent_bound: f64) -> Result<Outcome, MilpError> {
        self.nodes += 1;
        let Some(value) = self.lp()? else {
            return Ok(Outcome::Infeasible);
        };
        let bound = value.max(parent_bound);
        if bound >= self.prune_level() {
            self.pruned_floor = self.pruned_floor.min(bound);
            return Ok(Outcome::Pruned);
        }
        let x = self.solver.simplex.values();
        let mut pick: Option<(usize, f64)> = None;
        let mut best = self.params.integrality_tolerance;
        for (pos, &j) in self.binaries.iter().enumerate() {
            let frac = (x[j] - x[j].round()).abs();
            if frac > best {
                best = frac;
                pick = Some((pos, x[j]));
            }
        }
        match pick {
            Some((pos, value)) => Ok(Outcome::Branch { bound, pos, value }),
            None => {
                self.try_incumbent()?;
                Ok(Outcome::Integral)
            }
        }
    }

    /// Rounds the binaries of the current LP point, fixes them and re-solves
    /// for the continuous part.
    fn try_incumbent(&mut self) -> Result<(), MilpError> {
        let rounded: Vec<(usize, f64)> = self
            .binaries
            .iter()
            .enumerate()
            .map(|(pos, &j)| (pos, self.solver.simplex.values()[j].round().clamp(0.0, 1.0)))
            .collect();
        self.apply(&rounded);
        if let Some(value) = self.lp()? {
            if value < self.incumbent_value {
                let mut x = self.solver.simplex.values().to_vec();
                for &(pos, v) in &rounded {
                    x[self.binaries[pos]] = v;
                }
                self.incumbent_value = value;
                self.incumbent = Some(x);
            }
        }
        Ok(())
    }

    fn child(&mut self, parent: &[(usize, f64)], bound: f64, pos: usize, value: f64) -> Node {
        let mut fixes = parent.to_vec();
        fixes.push((pos, value));
        let id = self.next_id;
        self.next_id += 1;
        Node { bound, id, fixes }
    }

    fn run(&mut self) -> Result<MilpResult, MilpError> {
        self.nodes = 1;
        let Some(root_value) = self.lp()? else {
            return Ok(self.finish(MilpStatus::Infeasible, f64::INFINITY));
        };
        if self.out_of_budget() {
            return Ok(self.finish(MilpStatus::BoundOnly, root_value));
        }
        self.nodes = 0;
        let mut stack: Vec<Node> = vec![Node {
            bound: root_value,
            id: 0,
            fixes: Vec::new(),
        }];
        let mut heap: BinaryHeap<Node> = BinaryHeap::new();
        loop {
            let node = if self.incumbent.is_none() {
                stack.pop()
            } else {
                if !stack.is_empty() {
                    heap.extend(stack.drain(..));
                }
                heap.pop()
            };
            let Some(node) = node else {
                break;
            };
            if node.bound >= self.prune_level() {
                self.pruned_floor = self.pruned_floor.min(node.bound);
                if self.incumbent.is_some() {
                    // Every remaining heap node has an equal or larger bound.
                    for n in heap.drain() {
                        self.pruned_floor = self.pruned_floor.min(n.bound);
                    }
                }
                continue;
            }
            if self.out_of_budget() {
                let open = stack
                    .iter()
                    .chain(heap.iter())
                    .map(|n| n.bound)
                    .fold(node.bound, f64::min);
                let status = if self.incumbent.is_some() {
                    MilpStatus::Feasible
                } else {
                    MilpStatus::BoundOnly
                };
                let bound = open.min(self.pruned_floor).min(self.incumbent_value);
                return Ok(self.finish(status, bound));
            }
            self.apply(&node.fixes);
            match self.evaluate(node.bound)? {
                Outcome::Infeasible | Outcome::Pruned | Outcome::Integral => {}
                Outcome::Branch { bound, pos, value } => {
                    let down = self.child(&node.fixes, bound, pos, 0.0);
                    let up = self.child(&node.fixes, bound, pos, 1.0);
                    if self.incumbent.is_none() {
                        // Dive towards the rounded value first.
                        if value >= 0.5 {
                            stack.push(down);
                            stack.push(up);
                        } else {
                            stack.push(up);
                            stack.push(down);
                        }
                    } else {
                        heap.push(down);
                        heap.push(up);
                    }
                }
            }
        }
        if self.incumbent.is_none() {
            return Ok(self.finish(MilpStatus::Infeasible, f64::INFINITY));
        }
        let bound = self.pruned_floor.min(self.incumbent_value);
        Ok(self.finish(MilpStatus::Optimal, bound))
    }

    /// `bound` is in minimization form.
    fn finish(&mut self, status: MilpStatus, bound: f64) -> MilpResult {
        let sign = self.sign;
        let objective_value = self.incumbent.as_ref().map(|_| sign * self.incumbent_value);
        let best_bound = if status == MilpStatus::Infeasible {
            sign * f64::INFINITY
        } else {
            sign * bound
        };
        let gap = match objective_value {
            Some(v) => relative_gap(best_bound, v),
            None => f64::INFINITY,
        };
        MilpResult {
            status,
            incumbent: self.incumbent.take(),
            objective_value,
            best_bound,
            gap,
            node_count: self.nodes,
            wall_time: self.elapsed(),
        }
    }
}
