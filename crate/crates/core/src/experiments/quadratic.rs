//! Random quadratic test functions, their ReLU surrogates, and the paired
//! problem `min f1(x) s.t. f2(x) = alpha, x in [-1, 1]^n`.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bt::{tighten, BtParams, BtScheme};
use crate::encode::{build_problem, BoundSet, InputWiring, NamedObjective, NetSpec, NetworkEmbedding, ProblemSpec};
use crate::error::{BtError, ExperimentError};
use crate::lp::Sense;
use crate::milp::{solve_milp, MilpModel, MilpStatus, SolveParams};
use crate::net::{he_initialize, mape_with, LabeledDataset, ReluNetwork, ZeroTargetPolicy};
use crate::rng;
use crate::trainer::{sgd_train, TrainConfig};

/// `q(x) = x'Ax + b'x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub n: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
    pub seed: u64,
}

impl QuadraticSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut q = self.c;
        for i in 0..self.n {
            q += self.b[i] * x[i];
            for j in 0..self.n {
                q += x[i] * self.a[i][j] * x[j];
            }
        }
        q
    }

    /// `count` points drawn uniformly from `[-1, 1]^n` with exact targets.
    pub fn sample(&self, count: usize, seed: u64) -> LabeledDataset {
        let mut r = rng::stream(seed, &format!("sample-{}", self.seed));
        let inputs: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..self.n).map(|_| r.random_range(-1.0..=1.0)).collect())
            .collect();
        let targets = inputs.iter().map(|x| vec![self.eval(x)]).collect();
        LabeledDataset::new(inputs, targets).expect("finite samples")
    }
}

/// `A_ij ~ N(0, 5)` (variance 5), `b_i ~ N(0, 1)`, `c ~ N(0, 1)`.
pub fn gen_quadratic(n: usize, seed: u64) -> Result<QuadraticSpec, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Config("quadratic dimension must be at least 1".into()));
    }
    let mut r = rng::stream(seed, "quadratic");
    let wide = Normal::new(0.0, 5f64.sqrt()).unwrap();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let a = (0..n).map(|_| (0..n).map(|_| wide.sample(&mut r)).collect()).collect();
    let b = (0..n).map(|_| unit.sample(&mut r)).collect();
    let c = unit.sample(&mut r);
    Ok(QuadraticSpec { n, a, b, c, seed })
}

/// Surrogate architecture and training-set size per dimension.
pub fn surrogate_architecture(n: usize) -> Result<(Vec<usize>, usize), ExperimentError> {
    let (dims, samples): (&[usize], usize) = match n {
        1 => (&[1, 10, 5, 1], 100),
        2 => (&[2, 20, 10, 1], 500),
        3 => (&[3, 40, 20, 1], 2000),
        4 => (&[4, 50, 20, 1], 5000),
        5 => (&[5, 50, 30, 30, 1], 10_000),
        6 => (&[6, 80, 40, 40, 1], 20_000),
        _ => return Err(ExperimentError::Config(format!("no surrogate architecture for n = {n}"))),
    };
    Ok((dims.to_vec(), samples))
}

pub fn surrogate_train_config(n: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: if n == 1 { 10_000 } else { 16_000 },
        batch_size: 10,
        learning_rate: if n == 1 { 0.03 } else { 0.1 },
        l2_lambda: 0.0,
        seed,
        standardize: true,
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub spec: QuadraticSpec,
    pub net: ReluNetwork,
    pub data: LabeledDataset,
    /// Percent error on the training samples.
    pub mape: f64,
}

/// Draws a quadratic, samples it and fits the architecture for `n`.
pub fn train_surrogate(n: usize, seed: u64, config: Option<&TrainConfig>) -> Result<Surrogate, ExperimentError> {
    let spec = gen_quadratic(n, seed)?;
    let (dims, samples) = surrogate_architecture(n)?;
    let data = spec.sample(samples, seed);
    let init = he_initialize(&dims, seed)?;
    let default = surrogate_train_config(n, seed);
    let net = sgd_train(&init, &data, config.unwrap_or(&default))?;
    let mape = mape_with(&net, &data, ZeroTargetPolicy::Exclude)?;
    Ok(Surrogate { spec, net, data, mape })
}

/// The level set for `f2`: the median of `f2` over `count` box samples.
pub fn choose_alpha(net: &ReluNetwork, count: usize, seed: u64) -> Result<f64, ExperimentError> {
    if count == 0 {
        return Err(ExperimentError::Config("need at least one sample for alpha".into()));
    }
    let mut r = rng::stream(seed, "alpha");
    let n = net.input_dim();
    let mut ys: Vec<f64> = (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
            net.forward(&x).map(|y| y[0])
        })
        .collect::<Result<_, _>>()?;
    ys.sort_by(f64::total_cmp);
    let mid = ys.len() / 2;
    Ok(if ys.len() % 2 == 1 { ys[mid] } else { 0.5 * (ys[mid - 1] + ys[mid]) })
}

/// The paired model: shared inputs in `[-1, 1]^n`, `f2(x) = alpha` through
/// the output bounds of the second network, objective `min f1(x)`. A level
/// the second network cannot attain yields an infeasible model.
pub fn build_qn(
    net1: &ReluNetwork,
    bounds1: &BoundSet,
    net2: &ReluNetwork,
    bounds2: &BoundSet,
    alpha: f64,
) -> Result<(MilpModel, Vec<NetworkEmbedding>), ExperimentError> {
    let n = net1.input_dim();
    if net2.input_dim() != n || net1.output_dim() != 1 || net2.output_dim() != 1 {
        return Err(ExperimentError::Config(format!(
            "paired networks need equal inputs and scalar outputs, got {:?} and {:?}",
            net1.layer_dims(),
            net2.layer_dims()
        )));
    }
    let k2 = net2.depth();
    let mut b2 = bounds2.clone();
    b2.lower[k2][0] = alpha;
    b2.upper[k2][0] = alpha;
    let shared: Vec<String> = (0..n).map(|j| format!("net0_x_0_{j}")).collect();
    let spec = ProblemSpec {
        nets: vec![
            NetSpec::new(net1, bounds1),
            NetSpec {
                inputs: InputWiring::Shared(shared),
                ..NetSpec::new(net2, &b2)
            },
        ],
        extra_vars: vec![],
        constraints: vec![],
        objective: NamedObjective {
            sense: Sense::Minimize,
            terms: vec![(format!("net0_x_{}_0", net1.depth()), 1.0)],
            constant: 0.0,
        },
    };
    Ok(build_problem(&spec)?)
}

/// Outcome of tightening both networks and solving the paired model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QnOutcome {
    pub alpha: f64,
    pub status: MilpStatus,
    pub objective: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub best_bound: f64,
    pub gap: f64,
    pub bt_seconds: f64,
    pub opt_seconds: f64,
}

/// Tightens `net1` over the box and `net2` with its output fixed at
/// `alpha`, then solves the paired model.
pub fn solve_qn(
    net1: &ReluNetwork,
    net2: &ReluNetwork,
    alpha: f64,
    scheme: &BtScheme,
    bt: &BtParams,
    solve: &SolveParams,
) -> Result<QnOutcome, ExperimentError> {
    let start = Instant::now();
    let d = vec![(-1.0, 1.0); net1.input_dim()];
    let infeasible = |bt_seconds: f64| QnOutcome {
        alpha,
        status: MilpStatus::Infeasible,
        objective: None,
        x: None,
        best_bound: f64::INFINITY,
        gap: f64::INFINITY,
        bt_seconds,
        opt_seconds: 0.0,
    };
    let b1 = tighten(net1, &d, None, scheme, bt)?.bounds;
    let b2 = match tighten(net2, &d, Some(&[(alpha, alpha)]), scheme, bt) {
        Ok(r) => r.bounds,
        Err(BtError::Infeasible { .. }) => return Ok(infeasible(start.elapsed().as_secs_f64())),
        Err(e) => return Err(e.into()),
    };
    let bt_seconds = start.elapsed().as_secs_f64();
    let (model, embs) = build_qn(net1, &b1, net2, &b2, alpha)?;
    let r = solve_milp(&model, solve)?;
    let x = r
        .incumbent
        .as_ref()
        .map(|v| embs[0].inputs().iter().map(|id| v[id.0]).collect());
    Ok(QnOutcome {
        alpha,
        status: r.status,
        objective: r.objective_value,
        x,
        best_bound: r.best_bound,
        gap: r.gap,
        bt_seconds,
        opt_seconds: r.wall_time,
    })
}
