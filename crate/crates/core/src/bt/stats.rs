use serde::{Deserialize, Serialize};

use crate::encode::BoundSet;
use crate::error::BtError;

/// Mean absolute distance: per-layer average interval width, summed over layers.
pub fn mad(bounds: &BoundSet) -> Result<f64, BtError> {
    let mut total = 0.0;
    for (k, (ls, us)) in bounds.lower.iter().zip(&bounds.upper).enumerate() {
        if ls.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for (j, (&l, &u)) in ls.iter().zip(us).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(BtError::Box(format!("node ({j},{k}) has an infinite bound")));
            }
            sum += (u - l).abs();
        }
        total += sum / ls.len() as f64;
    }
    Ok(total)
}

/// Mean relative distance (percent) of `b` between the best bounds `b_star`
/// and the reference bounds `b_minus`; zero when those two coincide in MAD.
pub fn mrd(b: &BoundSet, b_star: &BoundSet, b_minus: &BoundSet) -> Result<f64, BtError> {
    let dims = b.layer_dims();
    if b_star.layer_dims() != dims || b_minus.layer_dims() != dims {
        return Err(BtError::Box("bound sets have different shapes".into()));
    }
    let (m, star, minus) = (mad(b)?, mad(b_star)?, mad(b_minus)?);
    let denom = (minus - star).abs();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (m - star).abs() / denom)
}

/// How much an output bound must move before it can tighten one input of a
/// single affine node with nonnegative weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbpAnalysis {
    /// Absolute change required: `sum_{i != j} w_i (u_i - l_i)`.
    pub delta_threshold: f64,
    /// The same as a fraction of the forward-propagated output width.
    pub delta_relative: f64,
    /// Share of the output width contributed by the target node.
    pub delta_param: f64,
}

pub fn bbp_threshold(w: &[f64], node_bounds: &[(f64, f64)], j: usize) -> Result<BbpAnalysis, BtError> {
    if w.len() != node_bounds.len() || j >= w.len() {
        return Err(BtError::Box(format!(
            "{} weights, {} intervals, target {j}",
            w.len(),
            node_bounds.len()
        )));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(BtError::Box("weights must be finite and nonnegative".into()));
    }
    if node_bounds.iter().any(|&(l, u)| !(u >= l) || !l.is_finite() || !u.is_finite()) {
        return Err(BtError::Box("intervals must be finite with u >= l".into()));
    }
    let spans: Vec<f64> = w.iter().zip(node_bounds).map(|(&wi, &(l, u))| wi * (u - l)).collect();
    let total: f64 = spans.iter().sum();
    let others: f64 = spans.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, s)| s).sum();
    if total == 0.0 {
        return Ok(BbpAnalysis {
            delta_threshold: others,
            delta_relative: 0.0,
            delta_param: 1.0,
        });
    }
    Ok(BbpAnalysis {
        delta_threshold: others,
        delta_relative: others / total,
        delta_param: spans[j] / total,
    })
}
