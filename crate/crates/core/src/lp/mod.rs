//! Linear models and a dense bounded-variable simplex solver.

mod lp_format;
pub(crate) mod simplex;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::LpError;

pub use lp_format::write_lp_format;
pub(crate) use simplex::Simplex;

/// Index of a variable inside a [`LinearModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    pub coeffs: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            sense: Sense::Minimize,
            coeffs: Vec::new(),
            constant: 0.0,
        }
    }
}

/// Merges repeated variables and drops explicit zeros.
pub(crate) fn normalize_terms(terms: &[(VarId, f64)]) -> Vec<(VarId, f64)> {
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for &(v, c) in terms {
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some(entry) => entry.1 += c,
            None => out.push((v, c)),
        }
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearModel {
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
    index: HashMap<String, VarId>,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Result<VarId, LpError> {
        let name = name.into();
        check_bounds(&name, lower, upper)?;
        if self.index.contains_key(&name) {
            return Err(LpError::InvalidModel(format!("duplicate variable name {name}")));
        }
        let id = VarId(self.variables.len());
        self.index.insert(name.clone(), id);
        self.variables.push(Variable { name, lower, upper });
        Ok(id)
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.index.get(name).copied()
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) -> Result<(), LpError> {
        let v = self
            .variables
            .get_mut(id.0)
            .ok_or_else(|| LpError::InvalidModel(format!("unknown variable {}", id.0)))?;
        check_bounds(&v.name, lower, upper)?;
        v.lower = lower;
        v.upper = upper;
        Ok(())
    }

    /// Adds `Σ coeffs · x (relation) rhs` and returns the row index.
    pub fn add_constraint(&mut self, coeffs: &[(VarId, f64)], relation: Relation, rhs: f64) -> Result<usize, LpError> {
        self.check_terms(coeffs)?;
        if !rhs.is_finite() {
            return Err(LpError::InvalidModel("non-finite right-hand side".into()));
        }
        self.constraints.push(Constraint {
            coeffs: normalize_terms(coeffs),
            relation,
            rhs,
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Replaces (or inserts, or with 0 removes) the coefficient of `var` in row `row`.
    pub fn set_coefficient(&mut self, row: usize, var: VarId, value: f64) -> Result<(), LpError> {
        if !value.is_finite() || var.0 >= self.variables.len() {
            return Err(LpError::InvalidModel("bad coefficient".into()));
        }
        let c = self
            .constraints
            .get_mut(row)
            .ok_or_else(|| LpError::InvalidModel(format!("unknown row {row}")))?;
        c.coeffs.retain(|(v, _)| *v != var);
        if value != 0.0 {
            c.coeffs.push((var, value));
        }
        Ok(())
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) -> Result<(), LpError> {
        if !rhs.is_finite() {
            return Err(LpError::InvalidModel("non-finite right-hand side".into()));
        }
        self.constraints
            .get_mut(row)
            .ok_or_else(|| LpError::InvalidModel(format!("unknown row {row}")))?
            .rhs = rhs;
        Ok(())
    }

    pub fn set_objective(&mut self, sense: Sense, coeffs: &[(VarId, f64)], constant: f64) -> Result<(), LpError> {
        self.check_terms(coeffs)?;
        if !constant.is_finite() {
            return Err(LpError::InvalidModel("non-finite objective constant".into()));
        }
        self.objective = Objective {
            sense,
            coeffs: normalize_terms(coeffs),
            constant,
        };
        Ok(())
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn check_terms(&self, coeffs: &[(VarId, f64)]) -> Result<(), LpError> {
        for &(v, c) in coeffs {
            if v.0 >= self.variables.len() {
                return Err(LpError::InvalidModel(format!("unknown variable {}", v.0)));
            }
            if !c.is_finite() {
                return Err(LpError::InvalidModel(format!(
                    "non-finite coefficient on {}",
                    self.variables[v.0].name
                )));
            }
        }
        Ok(())
    }

    /// Evaluates `Σ coeffs · x`.
    pub fn activity(coeffs: &[(VarId, f64)], x: &[f64]) -> f64 {
        coeffs.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Largest bound or constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, val) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - val).max(val - v.upper);
        }
        for c in &self.constraints {
            let a = Self::activity(&c.coeffs, x);
            let viol = match c.relation {
                Relation::Le => a - c.rhs,
                Relation::Ge => c.rhs - a,
                Relation::Eq => (a - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        Self::activity(&self.objective.coeffs, x) + self.objective.constant
    }
}

fn check_bounds(name: &str, lower: f64, upper: f64) -> Result<(), LpError> {
    if lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY || lower > upper {
        return Err(LpError::InvalidModel(format!("invalid bounds [{lower}, {upper}] on {name}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Variable values (meaningful when optimal).
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpOptions {
    /// Reported solutions violate no bound or row by more than this.
    pub feasibility_tolerance: f64,
    /// Smallest tableau entry accepted as a pivot.
    pub pivot_tolerance: f64,
    /// Reduced-cost tolerance for optimality.
    pub optimality_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-7,
            pivot_tolerance: 1e-9,
            optimality_tolerance: 1e-9,
            max_iterations: 200_000,
        }
    }
}

pub fn solve_lp(model: &LinearModel) -> Result<LpSolution, LpError> {
    solve_lp_with(model, &LpOptions::default())
}

pub fn solve_lp_with(model: &LinearModel, options: &LpOptions) -> Result<LpSolution, LpError> {
    let mut s = Simplex::new(model, *options)?;
    let status = s.solve()?;
    Ok(s.solution(status))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn var2(m: &mut LinearModel, lo: f64, hi: f64) -> (VarId, VarId) {
        (m.add_var("x1", lo, hi).unwrap(), m.add_var("x2", lo, hi).unwrap())
    }

    #[test]
    fn small_max() {
        let mut m = LinearModel::new();
        let (a, b) = var2(&mut m, 0.0, 1.0);
        m.add_constraint(&[(a, 1.0), (b, 2.0)], Relation::Le, 3.0).unwrap();
        m.set_objective(Sense::Maximize, &[(a, 1.0), (b, 1.0)], 0.0).unwrap();
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 2.0).abs() < 1e-12);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_rows() {
        let mut m = LinearModel::new();
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.add_constraint(&[(x, 1.0)], Relation::Ge, 1.0).unwrap();
        m.add_constraint(&[(x, 1.0)], Relation::Le, 0.0).unwrap();
        assert_eq!(solve_lp(&m).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_free_variable() {
        let mut m = LinearModel::new();
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.set_objective(Sense::Maximize, &[(x, 1.0)], 0.0).unwrap();
        assert_eq!(solve_lp(&m).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn empty_rows() {
        let mut m = LinearModel::new();
        let x = m.add_var("x", 0.0, 2.0).unwrap();
        m.add_constraint(&[], Relation::Le, 1.0).unwrap();
        m.set_objective(Sense::Maximize, &[(x, 1.0)], 0.5).unwrap();
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.objective_value, 2.5);
        m.add_constraint(&[(x, 0.0)], Relation::Ge, 1.0).unwrap();
        assert_eq!(solve_lp(&m).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_and_free_variables() {
        // min |y| style: y = x1 - x2, x1 + x2 = 1, minimize x1 with y free.
        let mut m = LinearModel::new();
        let x1 = m.add_var("x1", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let x2 = m.add_var("x2", 0.0, 10.0).unwrap();
        let y = m.add_var("y", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.add_constraint(&[(y, 1.0), (x1, -1.0), (x2, 1.0)], Relation::Eq, 0.0).unwrap();
        m.add_constraint(&[(x1, 1.0), (x2, 1.0)], Relation::Eq, 1.0).unwrap();
        m.set_objective(Sense::Minimize, &[(x1, 1.0)], 0.0).unwrap();
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 9.0).abs() < 1e-9);
        assert!((s.x[2] + 19.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_models() {
        let mut m = LinearModel::new();
        assert!(m.add_var("x", 1.0, 0.0).is_err());
        assert!(m.add_var("x", f64::NAN, 0.0).is_err());
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        assert!(m.add_var("x", 0.0, 1.0).is_err());
        assert!(m.add_constraint(&[(x, f64::INFINITY)], Relation::Le, 0.0).is_err());
        assert!(m.add_constraint(&[(VarId(7), 1.0)], Relation::Le, 0.0).is_err());
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's classic cycling instance for Dantzig pricing without
        // anti-cycling safeguards.
        let mut m = LinearModel::new();
        let x: Vec<VarId> = (0..4).map(|i| m.add_var(format!("x{i}"), 0.0, f64::INFINITY).unwrap()).collect();
        m.add_constraint(&[(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)], Relation::Le, 0.0)
            .unwrap();
        m.add_constraint(&[(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)], Relation::Le, 0.0)
            .unwrap();
        m.add_constraint(&[(x[2], 1.0)], Relation::Le, 1.0).unwrap();
        m.set_objective(Sense::Minimize, &[(x[0], -0.75), (x[1], 150.0), (x[2], -0.02), (x[3], 6.0)], 0.0)
            .unwrap();
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 0.05).abs() < 1e-9);
    }

    /// Solves a dense square system by Gaussian elimination with partial
    /// pivoting; `None` when (numerically) singular.
    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[p][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, p);
            b.swap(col, p);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Best vertex of a bounded polytope: every basic solution defined by n
    /// linearly independent active constraints or bounds.
    fn vertex_oracle(m: &LinearModel) -> Option<f64> {
        let n = m.num_vars();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for c in m.constraints() {
            let mut row = vec![0.0; n];
            for &(v, a) in &c.coeffs {
                row[v.0] += a;
            }
            planes.push((row, c.rhs));
        }
        for (i, v) in m.variables().iter().enumerate() {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            planes.push((e.clone(), v.lower));
            planes.push((e, v.upper));
        }
        let maximize = m.objective().sense == Sense::Maximize;
        let mut best: Option<f64> = None;
        let mut pick = vec![0usize; n];
        fn rec(
            start: usize,
            depth: usize,
            pick: &mut Vec<usize>,
            planes: &[(Vec<f64>, f64)],
            m: &LinearModel,
            maximize: bool,
            best: &mut Option<f64>,
        ) {
            let n = pick.len();
            if depth == n {
                let a = pick.iter().map(|&i| planes[i].0.clone()).collect();
                let b = pick.iter().map(|&i| planes[i].1).collect();
                if let Some(x) = solve_square(a, b) {
                    if m.max_violation(&x) <= 1e-9 {
                        let v = m.objective_value(&x);
                        let better = match best {
                            None => true,
                            Some(b) => (maximize && v > *b) || (!maximize && v < *b),
                        };
                        if better {
                            *best = Some(v);
                        }
                    }
                }
                return;
            }
            for i in start..planes.len() {
                pick[depth] = i;
                rec(i + 1, depth + 1, pick, planes, m, maximize, best);
            }
        }
        rec(0, 0, &mut pick, &planes, m, maximize, &mut best);
        best
    }

    fn random_lp(seed: u64) -> LinearModel {
        let mut r = rng::stream(seed, "lp");
        let n = r.random_range(1..=6);
        let rows = r.random_range(0..=6);
        let mut m = LinearModel::new();
        let vars: Vec<VarId> = (0..n)
            .map(|i| {
                let lo = r.random_range(-3.0..1.0_f64).round();
                let hi = lo + r.random_range(0.0..4.0_f64).round();
                m.add_var(format!("v{i}"), lo, hi).unwrap()
            })
            .collect();
        for _ in 0..rows {
            let mut coeffs: Vec<(VarId, f64)> = Vec::new();
            for &v in &vars {
                if r.random_bool(0.7) {
                    coeffs.push((v, r.random_range(-3i32..=3) as f64));
                }
            }
            let rel = match r.random_range(0..5) {
                0 => Relation::Eq,
                1 | 2 => Relation::Ge,
                _ => Relation::Le,
            };
            m.add_constraint(&coeffs, rel, r.random_range(-4i32..=4) as f64).unwrap();
        }
        let obj: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, r.random_range(-5.0..5.0))).collect();
        let sense = if r.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
        m.set_objective(sense, &obj, 0.0).unwrap();
        m
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut feasible = 0;
        for seed in 0..400 {
            let m = random_lp(seed);
            let s = solve_lp(&m).unwrap();
            match vertex_oracle(&m) {
                Some(best) => {
                    feasible += 1;
                    assert_eq!(s.status, LpStatus::Optimal, "seed {seed}");
                    assert!((s.objective_value - best).abs() <= 1e-6, "seed {seed}: {} vs {best}", s.objective_value);
                    assert!(m.max_violation(&s.x) <= 1e-7, "seed {seed}");
                }
                None => assert_eq!(s.status, LpStatus::Infeasible, "seed {seed}"),
            }
        }
        assert!(feasible > 100);
    }

    #[test]
    fn deterministic() {
        for seed in 0..20 {
            let m = random_lp(seed);
            assert_eq!(format!("{:?}", solve_lp(&m).unwrap()), format!("{:?}", solve_lp(&m).unwrap()));
        }
    }

    #[test]
    fn relaxation_dominates_integer_points() {
        for seed in 0..60 {
            let mut m = random_lp(seed + 1000);
            for i in 0..m.num_vars() {
                let v = m.variable(VarId(i)).clone();
                m.set_bounds(VarId(i), v.lower.ceil(), v.upper.floor()).unwrap();
            }
            let obj = m.objective().coeffs.clone();
            m.set_objective(Sense::Maximize, &obj, 0.0).unwrap();
            let s = solve_lp(&m).unwrap();
            let ranges: Vec<(i64, i64)> = m.variables().iter().map(|v| (v.lower as i64, v.upper as i64)).collect();
            let mut point: Vec<f64> = ranges.iter().map(|r| r.0 as f64).collect();
            loop {
                if m.max_violation(&point) <= 1e-12 {
                    assert_eq!(s.status, LpStatus::Optimal);
                    assert!(s.objective_value >= m.objective_value(&point) - 1e-9);
                }
                let mut i = 0;
                while i < point.len() {
                    if (point[i] as i64) < ranges[i].1 {
                        point[i] += 1.0;
                        break;
                    }
                    point[i] = ranges[i].0 as f64;
                    i += 1;
                }
                if i == point.len() {
                    break;
                }
            }
        }
    }

    #[test]
    fn warm_resolve_after_bound_and_objective_changes() {
        for seed in 0..200 {
            let m = random_lp(seed + 5000);
            let mut s = Simplex::new(&m, LpOptions::default()).unwrap();
            s.solve().unwrap();
            let mut r = rng::stream(seed, "warm");
            let mut m2 = m.clone();
            for _ in 0..3 {
                let j = r.random_range(0..m.num_vars());
                let v = m2.variable(VarId(j)).clone();
                let (lo, hi) = if r.random_bool(0.5) {
                    (v.lower, (v.lower + v.upper) / 2.0)
                } else {
                    ((v.lower + v.upper) / 2.0, v.upper)
                };
                m2.set_bounds(VarId(j), lo, hi).unwrap();
                s.set_var_bounds(j, lo, hi);
                if r.random_bool(0.3) {
                    let obj: Vec<(VarId, f64)> = (0..m.num_vars()).map(|i| (VarId(i), r.random_range(-2.0..2.0))).collect();
                    let sense = if r.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
                    m2.set_objective(sense, &obj, 0.0).unwrap();
                    s.set_objective(sense, &obj, 0.0);
                }
                let warm = s.solve().unwrap();
                let cold = solve_lp(&m2).unwrap();
                assert_eq!(warm, cold.status, "seed {seed}");
                if warm == LpStatus::Optimal {
                    let sol = s.solution(warm);
                    assert!((sol.objective_value - cold.objective_value).abs() <= 1e-7, "seed {seed}");
                    assert!(m2.max_violation(&sol.x) <= 1e-7);
                }
            }
        }
    }

    #[test]
    fn warm_resolve_after_matrix_edits() {
        let mut checked = 0;
        for seed in 0..200 {
            let mut m = random_lp(seed + 9000);
            if m.num_constraints() == 0 {
                continue;
            }
            let mut s = Simplex::new(&m, LpOptions::default()).unwrap();
            s.solve().unwrap();
            let mut r = rng::stream(seed, "edit");
            for _ in 0..3 {
                let row = r.random_range(0..m.num_constraints());
                let j = r.random_range(0..m.num_vars());
                let value = r.random_range(-3i32..=3) as f64;
                m.set_coefficient(row, VarId(j), value).unwrap();
                s.set_coefficient(row, j, value);
                if r.random_bool(0.5) {
                    let rhs = r.random_range(-4i32..=4) as f64;
                    m.set_rhs(row, rhs).unwrap();
                    s.set_rhs(row, rhs);
                }
                let warm = s.solve().unwrap();
                let cold = solve_lp(&m).unwrap();
                assert_eq!(warm, cold.status, "seed {seed}");
                if warm == LpStatus::Optimal {
                    checked += 1;
                    let sol = s.solution(warm);
                    assert!((sol.objective_value - cold.objective_value).abs() <= 1e-7, "seed {seed}");
                    assert!(m.max_violation(&sol.x) <= 1e-7);
                }
            }
        }
        assert!(checked > 50);
    }
}
