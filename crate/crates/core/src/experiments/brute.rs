//! Brute-force reference optima: dense grids with level-set scanlines, and
//! enumeration of activation patterns with one LP per pattern.

use crate::error::ExperimentError;
use crate::lp::{solve_lp, LinearModel, LpStatus, Relation, Sense, VarId};
use crate::net::ReluNetwork;

pub const GRID_LIMIT: u64 = 10_000_000;

fn grid_points(lo: f64, hi: f64, density: usize) -> Vec<f64> {
    if density <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..density)
        .map(|i| {
            if i + 1 == density {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (density - 1) as f64
            }
        })
        .collect()
}

fn check_size(points: u64) -> Result<(), ExperimentError> {
    if points > GRID_LIMIT {
        return Err(ExperimentError::GridTooLarge(points));
    }
    Ok(())
}

fn grid_size(dims: usize, density: usize, factor: usize) -> u64 {
    (density as u64).saturating_pow(dims as u32).saturating_mul(factor as u64)
}

/// Calls `visit` on every point of the regular grid over `bounds`.
fn for_each_grid_point(bounds: &[(f64, f64)], density: usize, mut visit: impl FnMut(&[f64])) {
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(l, u)| grid_points(l, u, density)).collect();
    let mut idx = vec![0usize; axes.len()];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        visit(&x);
        let mut d = 0;
        loop {
            if d == axes.len() {
                return;
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                x[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            x[d] = axes[d][0];
            d += 1;
        }
    }
}

/// Smallest value of `f` over a grid with `density` points per axis.
pub fn grid_minimum(
    f: impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    density: usize,
) -> Result<(f64, Vec<f64>), ExperimentError> {
    check_size(grid_size(bounds.len(), density, 1))?;
    let mut best = (f64::INFINITY, Vec::new());
    for_each_grid_point(bounds, density, |x| {
        let v = f(x);
        if v < best.0 {
            best = (v, x.to_vec());
        }
    });
    Ok(best)
}

/// Minimizes `objective` over `{x in box : level(x) = 0}` for continuous
/// `level`. Along every grid line parallel to each axis, sign changes of
/// `level` are located by bisection; the best crossings are then refined by
/// repeating the scan on shrinking windows around them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSetSearch {
    /// Grid points per axis on each scan.
    pub density: usize,
    /// Zoomed rescans around the best crossings.
    pub zoom_rounds: usize,
    /// Crossings kept for zooming.
    pub candidates: usize,
    /// Accept grid points with `|level| <= band` even without a sign change.
    pub band: f64,
}

impl Default for LevelSetSearch {
    fn default() -> Self {
        Self {
            density: 1000,
            zoom_rounds: 3,
            candidates: 8,
            band: 1e-9,
        }
    }
}

fn bisect(level: &impl Fn(&[f64]) -> f64, a: &[f64], b: &[f64], ga: f64) -> Vec<f64> {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let mut ga = ga;
    let mut mid = a.clone();
    for _ in 0..80 {
        for ((m, x), y) in mid.iter_mut().zip(&a).zip(&b) {
            *m = 0.5 * (x + y);
        }
        let gm = level(&mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (ga < 0.0) {
            a.clone_from(&mid);
            ga = gm;
        } else {
            b.clone_from(&mid);
        }
    }
    mid
}

impl LevelSetSearch {
    fn scan(
        &self,
        objective: &impl Fn(&[f64]) -> f64,
        level: &impl Fn(&[f64]) -> f64,
        bounds: &[(f64, f64)],
        found: &mut Vec<(f64, Vec<f64>)>,
    ) {
        let n = bounds.len();
        for axis in 0..n {
            let mut others: Vec<(f64, f64)> = bounds.to_vec();
            others[axis] = (0.0, 0.0);
            let line = grid_points(bounds[axis].0, bounds[axis].1, self.density);
            for_each_grid_point(&others, self.density, |base| {
                let mut x = base.to_vec();
                let mut prev: Option<(Vec<f64>, f64)> = None;
                for &t in &line {
                    x[axis] = t;
                    let g = level(&x);
                    if g.abs() <= self.band {
                        found.push((objective(&x), x.clone()));
                    }
                    if let Some((px, pg)) = &prev {
                        if (*pg < 0.0 && g > 0.0) || (*pg > 0.0 && g < 0.0) {
                            let root = bisect(level, px, &x, *pg);
                            found.push((objective(&root), root));
                        }
                    }
                    prev = Some((x.clone(), g));
                }
            });
        }
    }

    fn keep_best(&self, found: &mut Vec<(f64, Vec<f64>)>) {
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        found.truncate(self.candidates.max(1));
    }

    pub fn minimize(
        &self,
        objective: impl Fn(&[f64]) -> f64,
        level: impl Fn(&[f64]) -> f64,
        bounds: &[(f64, f64)],
    ) -> Result<Option<(f64, Vec<f64>)>, ExperimentError> {
        let n = bounds.len();
        check_size(grid_size(n, self.density, n))?;
        let mut found = Vec::new();
        self.scan(&objective, &level, bounds, &mut found);
        self.keep_best(&mut found);
        let mut width: Vec<f64> = bounds.iter().map(|&(l, u)| (u - l) / (self.density.max(2) - 1) as f64).collect();
        for _ in 0..self.zoom_rounds {
            let mut next = found.clone();
            for (_, x) in &found {
                let window: Vec<(f64, f64)> = x
                    .iter()
                    .zip(bounds)
                    .zip(&width)
                    .map(|((&c, &(l, u)), &w)| ((c - 2.0 * w).max(l), (c + 2.0 * w).min(u)))
                    .collect();
                self.scan(&objective, &level, &window, &mut next);
            }
            found = next;
            self.keep_best(&mut found);
            for w in &mut width {
                *w *= 4.0 / (self.density.max(2) - 1) as f64;
            }
        }
        Ok(found.into_iter().next())
    }
}

/// `min f1(x)` over `x in [-1, 1]^n` with `f2(x) = alpha`, by level-set search.
pub fn brute_force_qn(
    net1: &ReluNetwork,
    net2: &ReluNetwork,
    alpha: f64,
    search: &LevelSetSearch,
) -> Result<Option<(f64, Vec<f64>)>, ExperimentError> {
    let n = net1.input_dim();
    let bounds = vec![(-1.0, 1.0); n];
    search.minimize(
        |x| net1.forward_unchecked(x)[0],
        |x| net2.forward_unchecked(x)[0] - alpha,
        &bounds,
    )
}

/// Minimum (or maximum) of output `j` over the input box by enumerating all
/// activation patterns of the hidden nodes and solving one LP per pattern.
pub fn pattern_extremum(
    net: &ReluNetwork,
    bounds: &[(f64, f64)],
    output: usize,
    sense: Sense,
) -> Result<Option<f64>, ExperimentError> {
    let hidden = net.hidden_nodes();
    if hidden > 20 {
        return Err(ExperimentError::Config(format!("{hidden} hidden nodes is too many to enumerate")));
    }
    if bounds.len() != net.input_dim() || output >= net.output_dim() {
        return Err(ExperimentError::Config("box or output index does not fit the network".into()));
    }
    let mut best: Option<f64> = None;
    for pattern in 0u64..(1u64 << hidden) {
        let mut m = LinearModel::new();
        let mut prev: Vec<VarId> = Vec::new();
        for (j, &(l, u)) in bounds.iter().enumerate() {
            prev.push(m.add_var(format!("in{j}"), l, u)?);
        }
        let mut bit = 0;
        let depth = net.depth();
        let mut out = None;
        for k in 1..=depth {
            let layer = net.layer(k);
            let mut cur = Vec::with_capacity(layer.outputs());
            for i in 0..layer.outputs() {
                let mut terms: Vec<(VarId, f64)> = prev.iter().copied().zip(layer.row(i).iter().copied()).collect();
                let rhs = -layer.bias()[i];
                if k == depth {
                    if i == output {
                        let y = m.add_var("out", f64::NEG_INFINITY, f64::INFINITY)?;
                        terms.push((y, -1.0));
                        m.add_constraint(&terms, Relation::Eq, rhs)?;
                        out = Some(y);
                    }
                    continue;
                }
                let active = pattern >> bit & 1 == 1;
                bit += 1;
                let x = m.add_var(format!("h{k}_{i}"), 0.0, f64::INFINITY)?;
                if active {
                    // t >= 0 and x = t
                    m.add_constraint(&terms, Relation::Ge, rhs)?;
                    terms.push((x, -1.0));
                    m.add_constraint(&terms, Relation::Eq, rhs)?;
                } else {
                    m.add_constraint(&terms, Relation::Le, rhs)?;
                    m.set_bounds(x, 0.0, 0.0)?;
                }
                cur.push(x);
            }
            prev = cur;
        }
        m.set_objective(sense, &[(out.expect("output row"), 1.0)], 0.0)?;
        let s = solve_lp(&m)?;
        if s.status != LpStatus::Optimal {
            continue;
        }
        let v = s.objective_value;
        best = Some(match (best, sense) {
            (None, _) => v,
            (Some(b), Sense::Minimize) => b.min(v),
            (Some(b), Sense::Maximize) => b.max(v),
        });
    }
    Ok(best)
}
