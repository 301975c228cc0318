//! Dense tableau simplex with explicit variable bounds.
//!
//! Every row `i` of the model becomes `Σ a_ij x_j - r_i = 0` with a logical
//! variable `r_i` carrying the row's range, so bounds are the only
//! inequalities the engine has to handle. A cold start uses a crash basis of
//! logicals plus artificials on the rows it cannot satisfy, then runs a
//! two-phase primal simplex. Later solves after bound, objective or
//! coefficient edits start from the previous basis and use the dual simplex
//! when the old basis lost primal feasibility.

use super::{LinearModel, LpOptions, LpSolution, LpStatus, Relation, Sense, VarId};
use crate::error::LpError;

const REINVERT_EVERY: usize = 100;
/// Ratio-test ties are broken within this absolute window.
const TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    Lower,
    Upper,
    Free,
}

#[derive(Debug, Clone)]
pub(crate) struct Simplex {
    opts: LpOptions,
    m: usize,
    ns: usize,
    n: usize,
    /// Original constraint matrix including logical (and artificial) columns.
    a: Vec<f64>,
    /// Current tableau `B^{-1} A`.
    t: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    relation: Vec<Relation>,
    /// Working costs (minimization) for the current phase.
    cost: Vec<f64>,
    obj: Vec<f64>,
    sense: Sense,
    constant: f64,
    x: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    has_basis: bool,
    needs_reinvert: bool,
    since_reinvert: usize,
    iterations: usize,
    scratch: Vec<f64>,
    nonzeros: Vec<usize>,
}

fn logical_range(relation: Relation, rhs: f64) -> (f64, f64) {
    match relation {
        Relation::Le => (f64::NEG_INFINITY, rhs),
        Relation::Ge => (rhs, f64::INFINITY),
        Relation::Eq => (rhs, rhs),
    }
}

impl Simplex {
    pub(crate) fn new(model: &LinearModel, opts: LpOptions) -> Result<Self, LpError> {
        let ns = model.num_vars();
        let m = model.num_constraints();
        let n = ns + m;
        let mut a = vec![0.0; m * n];
        let mut lo = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        for v in model.variables() {
            lo.push(v.lower);
            up.push(v.upper);
        }
        let mut relation = Vec::with_capacity(m);
        for (i, c) in model.constraints().iter().enumerate() {
            for &(v, coef) in &c.coeffs {
                a[i * n + v.0] += coef;
            }
            a[i * n + ns + i] = -1.0;
            let (l, u) = logical_range(c.relation, c.rhs);
            lo.push(l);
            up.push(u);
            relation.push(c.relation);
        }
        let mut s = Self {
            opts,
            m,
            ns,
            n,
            t: a.clone(),
            a,
            lo,
            up,
            relation,
            cost: vec![0.0; n],
            obj: vec![0.0; ns],
            sense: Sense::Minimize,
            constant: 0.0,
            x: vec![0.0; n],
            d: vec![0.0; n],
            basis: Vec::new(),
            state: vec![State::Lower; n],
            has_basis: false,
            needs_reinvert: false,
            since_reinvert: 0,
            iterations: 0,
            scratch: vec![0.0; n],
            nonzeros: Vec::with_capacity(n),
        };
        let o = model.objective();
        s.set_objective(o.sense, &o.coeffs, o.constant);
        Ok(s)
    }

    pub(crate) fn var_bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.up[j])
    }

    pub(crate) fn set_var_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        debug_assert!(j < self.ns && lower <= upper);
        self.lo[j] = lower;
        self.up[j] = upper;
    }

    pub(crate) fn set_objective(&mut self, sense: Sense, coeffs: &[(VarId, f64)], constant: f64) {
        self.obj.iter_mut().for_each(|c| *c = 0.0);
        for &(v, c) in coeffs {
            self.obj[v.0] += c;
        }
        self.sense = sense;
        self.constant = constant;
    }

    pub(crate) fn set_coefficient(&mut self, row: usize, j: usize, value: f64) {
        let idx = row * self.n + j;
        if self.a[idx] != value {
            self.a[idx] = value;
            self.needs_reinvert = true;
        }
    }

    pub(crate) fn set_rhs(&mut self, row: usize, rhs: f64) {
        let (l, u) = logical_range(self.relation[row], rhs);
        self.lo[self.ns + row] = l;
        self.up[self.ns + row] = u;
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.x[..self.ns]
    }

    pub(crate) fn objective_value(&self) -> f64 {
        self.obj.iter().zip(&self.x).map(|(c, v)| c * v).sum::<f64>() + self.constant
    }

    pub(crate) fn solution(&self, status: LpStatus) -> LpSolution {
        LpSolution {
            status,
            x: self.values().to_vec(),
            objective_value: match status {
                LpStatus::Optimal => self.objective_value(),
                LpStatus::Infeasible => f64::NAN,
                LpStatus::Unbounded => match self.sense {
                    Sense::Minimize => f64::NEG_INFINITY,
                    Sense::Maximize => f64::INFINITY,
                },
            },
            iterations: self.iterations,
        }
    }

    /// Solves from the previous basis when there is one, falling back to a
    /// cold start on numerical trouble.
    pub(crate) fn solve(&mut self) -> Result<LpStatus, LpError> {
        self.iterations = 0;
        if self.has_basis {
            match self.warm() {
                Ok(status) => return Ok(status),
                Err(LpError::InvalidModel(e)) => return Err(LpError::InvalidModel(e)),
                Err(_) => {}
            }
        }
        self.cold()
    }

    fn phase_two_costs(&mut self) {
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for (c, o) in self.cost.iter_mut().zip(&self.obj) {
            *c = sign * o;
        }
    }

    fn resize_columns(&mut self, new_n: usize) {
        let (m, old) = (self.m, self.n);
        let keep = old.min(new_n);
        let mut a = vec![0.0; m * new_n];
        let mut t = vec![0.0; m * new_n];
        for i in 0..m {
            a[i * new_n..i * new_n + keep].copy_from_slice(&self.a[i * old..i * old + keep]);
            t[i * new_n..i * new_n + keep].copy_from_slice(&self.t[i * old..i * old + keep]);
        }
        self.a = a;
        self.t = t;
        for v in [&mut self.lo, &mut self.up, &mut self.cost, &mut self.x, &mut self.d, &mut self.scratch] {
            v.resize(new_n, 0.0);
        }
        self.state.resize(new_n, State::Lower);
        self.n = new_n;
    }

    fn place_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lo[j], self.up[j]);
        let st = match self.state[j] {
            State::Lower if l.is_finite() => State::Lower,
            State::Upper if u.is_finite() => State::Upper,
            _ if l.is_finite() => State::Lower,
            _ if u.is_finite() => State::Upper,
            _ => State::Free,
        };
        self.state[j] = st;
        self.x[j] = match st {
            State::Lower => l,
            State::Upper => u,
            _ => 0.0,
        };
    }

    fn cold(&mut self) -> Result<LpStatus, LpError> {
        let (m, ns) = (self.m, self.ns);
        self.resize_columns(ns + m);
        for j in 0..ns {
            self.state[j] = State::Lower;
            self.place_nonbasic(j);
        }
        let mut arts: Vec<(usize, f64, f64)> = Vec::new();
        self.basis = vec![0; m];
        for i in 0..m {
            let act: f64 = (0..ns).map(|j| self.a[i * self.n + j] * self.x[j]).sum();
            let r = ns + i;
            if act >= self.lo[r] && act <= self.up[r] {
                self.state[r] = State::Basic;
                self.x[r] = act;
                self.basis[i] = r;
            } else {
                let target = act.clamp(self.lo[r], self.up[r]);
                self.state[r] = if target == self.lo[r] { State::Lower } else { State::Upper };
                self.x[r] = target;
                let sigma = if target > act { 1.0 } else { -1.0 };
                arts.push((i, sigma, (target - act).abs()));
            }
        }
        let base = ns + m;
        self.resize_columns(base + arts.len());
        for (k, &(i, sigma, value)) in arts.iter().enumerate() {
            let c = base + k;
            self.a[i * self.n + c] = sigma;
            self.lo[c] = 0.0;
            self.up[c] = f64::INFINITY;
            self.state[c] = State::Basic;
            self.x[c] = value;
            self.basis[i] = c;
        }
        // The crash basis is diagonal, so the tableau is a row scaling of A.
        self.t.copy_from_slice(&self.a);
        for i in 0..m {
            let b = self.basis[i];
            let beta = self.a[i * self.n + b];
            if beta != 1.0 {
                let inv = 1.0 / beta;
                self.t[i * self.n..(i + 1) * self.n].iter_mut().for_each(|v| *v *= inv);
            }
        }
        self.has_basis = true;
        self.needs_reinvert = false;
        self.since_reinvert = 0;

        if !arts.is_empty() {
            self.cost.iter_mut().for_each(|c| *c = 0.0);
            for c in base..self.n {
                self.cost[c] = 1.0;
            }
            self.recompute_d();
            self.primal()?;
            self.reinvert()?;
            let infeasibility: f64 = (base..self.n).map(|c| self.x[c]).sum();
            if infeasibility > self.opts.feasibility_tolerance {
                self.has_basis = false;
                return Ok(LpStatus::Infeasible);
            }
            for c in base..self.n {
                self.up[c] = 0.0;
                if self.state[c] != State::Basic {
                    self.state[c] = State::Lower;
                    self.x[c] = 0.0;
                }
            }
            self.drive_out_artificials(base);
        }
        self.phase_two_costs();
        self.recompute_d();
        let optimal = self.primal()?;
        if !optimal {
            return Ok(LpStatus::Unbounded);
        }
        self.polish()
    }

    /// Pivots zero-valued basic artificials out where possible and drops the
    /// artificial columns once none remain basic.
    fn drive_out_artificials(&mut self, base: usize) {
        for r in 0..self.m {
            if self.basis[r] < base {
                continue;
            }
            let row = &self.t[r * self.n..(r + 1) * self.n];
            let mut best = None;
            let mut best_abs = 1e-7;
            for (j, &v) in row.iter().enumerate().take(base) {
                if self.state[j] != State::Basic && v.abs() > best_abs {
                    best_abs = v.abs();
                    best = Some(j);
                }
            }
            if let Some(q) = best {
                let b = self.basis[r];
                let delta = (self.x[b] - 0.0) / self.t[r * self.n + q];
                self.move_entering(q, delta);
                self.x[b] = 0.0;
                self.state[b] = State::Lower;
                self.pivot(r, q);
            }
        }
        if self.basis.iter().all(|&b| b < base) {
            self.resize_columns(base);
        }
    }

    fn warm(&mut self) -> Result<LpStatus, LpError> {
        if self.needs_reinvert {
            self.needs_reinvert = false;
            self.reinvert()?;
        }
        for j in 0..self.n {
            if self.state[j] != State::Basic {
                self.place_nonbasic(j);
            }
        }
        self.phase_two_costs();
        self.recompute_xb();
        self.recompute_d();
        self.restore_dual_feasibility();
        let otol = self.opts.optimality_tolerance;
        let dual_feasible = (0..self.n).all(|j| match self.state[j] {
            State::Basic => true,
            _ if self.lo[j] == self.up[j] => true,
            State::Lower => self.d[j] >= -otol,
            State::Upper => self.d[j] <= otol,
            State::Free => self.d[j].abs() <= otol,
        });
        if self.max_basic_violation().0 > self.opts.feasibility_tolerance * 1e-2 {
            if !dual_feasible {
                // Zero costs make every basis dual feasible, turning the dual
                // simplex into a pure feasibility search.
                self.cost.iter_mut().for_each(|c| *c = 0.0);
                self.d.iter_mut().for_each(|c| *c = 0.0);
            }
            let feasible = self.dual()?;
            if !feasible {
                // Confirm on a fresh factorization before declaring it.
                self.reinvert()?;
                if !self.dual()? {
                    return Ok(LpStatus::Infeasible);
                }
            }
            if !dual_feasible {
                self.phase_two_costs();
                self.recompute_d();
            }
        }
        if !self.primal()? {
            return Ok(LpStatus::Unbounded);
        }
        self.polish()
    }

    /// Moves boxed nonbasic variables to the bound their reduced cost prefers.
    fn restore_dual_feasibility(&mut self) {
        let otol = self.opts.optimality_tolerance;
        let mut moved = false;
        for j in 0..self.n {
            let (l, u) = (self.lo[j], self.up[j]);
            if !(l.is_finite() && u.is_finite()) || l == u {
                continue;
            }
            match self.state[j] {
                State::Lower if self.d[j] < -otol => {
                    self.state[j] = State::Upper;
                    self.x[j] = u;
                    moved = true;
                }
                State::Upper if self.d[j] > otol => {
                    self.state[j] = State::Lower;
                    self.x[j] = l;
                    moved = true;
                }
                _ => {}
            }
        }
        if moved {
            self.recompute_xb();
        }
    }

    /// Refactorizes and repairs residual infeasibility left by round-off.
    fn polish(&mut self) -> Result<LpStatus, LpError> {
        for _ in 0..3 {
            if self.since_reinvert > 0 {
                self.reinvert()?;
            }
            let clean = self.max_basic_violation().0 <= self.opts.feasibility_tolerance * 1e-2;
            if clean {
                return Ok(LpStatus::Optimal);
            }
            if !self.dual()? {
                return Ok(LpStatus::Infeasible);
            }
            if !self.primal()? {
                return Ok(LpStatus::Unbounded);
            }
        }
        if self.max_basic_violation().0 <= self.opts.feasibility_tolerance {
            Ok(LpStatus::Optimal)
        } else {
            Err(LpError::Numerical("could not reach a primal feasible basis".into()))
        }
    }

    fn max_basic_violation(&self) -> (f64, usize) {
        let mut worst = (0.0, usize::MAX);
        for (i, &b) in self.basis.iter().enumerate() {
            let v = (self.lo[b] - self.x[b]).max(self.x[b] - self.up[b]);
            if v > worst.0 {
                worst = (v, i);
            }
        }
        worst
    }

    fn tick(&mut self) -> Result<(), LpError> {
        self.iterations += 1;
        if self.iterations > self.opts.max_iterations {
            return Err(LpError::IterationLimit(self.iterations - 1));
        }
        if self.since_reinvert >= REINVERT_EVERY {
            self.reinvert()?;
        }
        Ok(())
    }

    fn move_entering(&mut self, q: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        let n = self.n;
        for i in 0..self.m {
            let a = self.t[i * n + q];
            if a != 0.0 {
                self.x[self.basis[i]] -= a * delta;
            }
        }
    }

    /// Primal simplex from a primal feasible basis. Returns `false` when the
    /// objective is unbounded below.
    fn primal(&mut self) -> Result<bool, LpError> {
        let bland_after = 5 * (self.m + self.n);
        let otol = self.opts.optimality_tolerance;
        let ptol = self.opts.pivot_tolerance;
        let mut degenerate = 0usize;
        loop {
            self.tick()?;
            let bland = degenerate > bland_after;
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.n {
                if self.lo[j] == self.up[j] {
                    continue;
                }
                let dj = self.d[j];
                let dir = match self.state[j] {
                    State::Basic => continue,
                    State::Lower if dj < -otol => 1.0,
                    State::Upper if dj > otol => -1.0,
                    State::Free if dj.abs() > otol => -dj.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(true);
            };

            let n = self.n;
            let mut row_theta = f64::INFINITY;
            for i in 0..self.m {
                let alpha = dir * self.t[i * n + q];
                if let Some(limit) = self.row_limit(i, alpha, ptol) {
                    row_theta = row_theta.min(limit);
                }
            }
            let mut leave: Option<usize> = None;
            if row_theta.is_finite() {
                let mut best_alpha = 0.0;
                for i in 0..self.m {
                    let alpha = dir * self.t[i * n + q];
                    let Some(limit) = self.row_limit(i, alpha, ptol) else {
                        continue;
                    };
                    if limit > row_theta + TIE {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some(r) if bland => self.basis[i] < self.basis[r],
                        Some(_) => alpha.abs() > best_alpha,
                    };
                    if better {
                        leave = Some(i);
                        best_alpha = alpha.abs();
                    }
                }
            }
            let flip_theta = self.up[q] - self.lo[q];
            if flip_theta <= row_theta {
                if !flip_theta.is_finite() {
                    return Ok(false);
                }
                self.move_entering(q, dir * flip_theta);
                if dir > 0.0 {
                    self.state[q] = State::Upper;
                    self.x[q] = self.up[q];
                } else {
                    self.state[q] = State::Lower;
                    self.x[q] = self.lo[q];
                }
                degenerate = 0;
                continue;
            }
            let r = leave.expect("finite ratio has a leaving row");
            let b = self.basis[r];
            let alpha = dir * self.t[r * n + q];
            self.move_entering(q, dir * row_theta);
            if alpha > 0.0 {
                self.x[b] = self.lo[b];
                self.state[b] = State::Lower;
            } else {
                self.x[b] = self.up[b];
                self.state[b] = State::Upper;
            }
            self.pivot(r, q);
            degenerate = if row_theta <= TIE { degenerate + 1 } else { 0 };
        }
    }

    /// Step length at which basic variable of row `i` hits a bound when it
    /// changes at rate `-alpha`.
    fn row_limit(&self, i: usize, alpha: f64, ptol: f64) -> Option<f64> {
        if alpha.abs() <= ptol {
            return None;
        }
        let b = self.basis[i];
        if alpha > 0.0 {
            let l = self.lo[b];
            l.is_finite().then(|| (self.x[b] - l).max(0.0) / alpha)
        } else {
            let u = self.up[b];
            u.is_finite().then(|| (u - self.x[b]).max(0.0) / -alpha)
        }
    }

    /// Dual simplex from a dual feasible basis. Returns `false` when a row
    /// proves the bounds infeasible.
    fn dual(&mut self) -> Result<bool, LpError> {
        let ptol = self.opts.pivot_tolerance;
        let target_tol = self.opts.feasibility_tolerance * 1e-2;
        let cap = self.iterations + 50 * (self.m + self.n) + 1000;
        loop {
            self.tick()?;
            if self.iterations > cap {
                return Err(LpError::IterationLimit(self.iterations));
            }
            let (worst, r) = self.max_basic_violation();
            if worst <= target_tol {
                return Ok(true);
            }
            let n = self.n;
            let b = self.basis[r];
            let (target, s) = if self.x[b] < self.lo[b] { (self.lo[b], 1.0) } else { (self.up[b], -1.0) };
            let mut entering: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..n {
                if self.state[j] == State::Basic || self.lo[j] == self.up[j] {
                    continue;
                }
                let alpha = self.t[r * n + j];
                if alpha.abs() <= ptol {
                    continue;
                }
                let dir = match self.state[j] {
                    State::Lower => 1.0,
                    State::Upper => -1.0,
                    _ => {
                        if -alpha * s > 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                };
                if -alpha * dir * s <= 0.0 {
                    continue;
                }
                let ratio = (self.d[j] * dir).max(0.0) / alpha.abs();
                if ratio < best_ratio - TIE || (ratio <= best_ratio + TIE && alpha.abs() > best_alpha) {
                    best_ratio = ratio.min(best_ratio);
                    best_alpha = alpha.abs();
                    entering = Some(j);
                }
            }
            let Some(q) = entering else {
                return Ok(worst <= self.opts.feasibility_tolerance);
            };
            let delta = (self.x[b] - target) / self.t[r * n + q];
            self.move_entering(q, delta);
            self.x[b] = target;
            self.state[b] = if s > 0.0 { State::Lower } else { State::Upper };
            self.pivot(r, q);
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let inv = 1.0 / self.t[r * n + q];
        self.nonzeros.clear();
        for j in 0..n {
            let v = self.t[r * n + j] * inv;
            self.t[r * n + j] = v;
            self.scratch[j] = v;
            if v != 0.0 {
                self.nonzeros.push(j);
            }
        }
        self.t[r * n + q] = 1.0;
        self.scratch[q] = 1.0;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * n..(i + 1) * n];
            for &j in &self.nonzeros {
                row[j] -= f * self.scratch[j];
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in &self.nonzeros {
                self.d[j] -= f * self.scratch[j];
            }
        }
        self.d[q] = 0.0;
        self.basis[r] = q;
        self.state[q] = State::Basic;
        self.since_reinvert += 1;
    }

    /// Rebuilds the tableau from the original matrix for the current basis.
    fn reinvert(&mut self) -> Result<(), LpError> {
        let (m, n) = (self.m, self.n);
        self.t.copy_from_slice(&self.a);
        let mut cols: Vec<usize> = self.basis.clone();
        // Logical and artificial columns are unit vectors; eliminating them
        // first keeps fill-in low.
        cols.sort_by_key(|&c| std::cmp::Reverse(c >= self.ns));
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        for &c in &cols {
            let mut p = usize::MAX;
            let mut best = 1e-11;
            for i in 0..m {
                let v = self.t[i * n + c].abs();
                if !assigned[i] && v > best {
                    best = v;
                    p = i;
                }
            }
            if p == usize::MAX {
                self.has_basis = false;
                return Err(LpError::Numerical("singular basis".into()));
            }
            assigned[p] = true;
            new_basis[p] = c;
            let inv = 1.0 / self.t[p * n + c];
            self.nonzeros.clear();
            for j in 0..n {
                let v = self.t[p * n + j] * inv;
                self.t[p * n + j] = v;
                self.scratch[j] = v;
                if v != 0.0 {
                    self.nonzeros.push(j);
                }
            }
            for i in 0..m {
                if i == p {
                    continue;
                }
                let f = self.t[i * n + c];
                if f == 0.0 {
                    continue;
                }
                let row = &mut self.t[i * n..(i + 1) * n];
                for &j in &self.nonzeros {
                    row[j] -= f * self.scratch[j];
                }
                row[c] = 0.0;
            }
        }
        self.basis = new_basis;
        self.since_reinvert = 0;
        self.recompute_xb();
        self.recompute_d();
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let n = self.n;
        self.nonzeros.clear();
        for j in 0..n {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                self.nonzeros.push(j);
            }
        }
        for i in 0..self.m {
            let row = &self.t[i * n..(i + 1) * n];
            let s: f64 = self.nonzeros.iter().map(|&j| row[j] * self.x[j]).sum();
            self.x[self.basis[i]] = -s;
        }
    }

    fn recompute_d(&mut self) {
        let n = self.n;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * n..(i + 1) * n];
            for (d, t) in self.d.iter_mut().zip(row) {
                *d -= cb * t;
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }
}
