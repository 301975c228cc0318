//! Fixed inputs shared by the benchmarks.

use reluopt::{he_initialize, LinearModel, ReluNetwork, Relation, Sense};

/// He-initialized network with the given layer sizes, seed 0.
pub fn network(dims: &[usize]) -> ReluNetwork {
    he_initialize(dims, 0).expect("benchmark dims are valid")
}

pub fn unit_box(n: usize) -> Vec<(f64, f64)> {
    vec![(-1.0, 1.0); n]
}

/// Dense packing LP `max sum x` with `n` variables and `m` random-looking
/// rows, deterministic in `n` and `m`.
pub fn packing_lp(n: usize, m: usize) -> LinearModel {
    let mut lp = LinearModel::new();
    let xs: Vec<_> = (0..n).map(|j| lp.add_var(format!("x{j}"), 0.0, 10.0).unwrap()).collect();
    for i in 0..m {
        let terms = xs
            .iter()
            .enumerate()
            .map(|(j, &x)| (x, 1.0 + ((i * 7 + j * 13) % 11) as f64))
            .collect::<Vec<_>>();
        lp.add_constraint(&terms, Relation::Le, 50.0 + i as f64).unwrap();
    }
    let objective: Vec<_> = xs.iter().map(|&x| (x, 1.0)).collect();
    lp.set_objective(Sense::Maximize, &objective, 0.0).unwrap();
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use reluopt::{solve_lp, LpStatus};

    #[test]
    fn fixtures_are_solvable() {
        let s = solve_lp(&packing_lp(20, 10)).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(network(&[3, 10, 1]).layer_dims(), &[3, 10, 1]);
    }
}
