//! Minibatch SGD for [`ReluNetwork`] under a mean-squared-error loss with an
//! L2 penalty on every weight and bias.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::net::{DenseLayer, LabeledDataset, ReluNetwork};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    /// Train on standardized inputs/targets and fold the affine maps back
    /// into the first and last layers on export.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.01,
            l2_lambda: 0.0,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(NetError::Argument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::Argument("batch size must be at least 1".into()));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(NetError::Argument("l2 penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

fn squared_norm(net: &ReluNetwork) -> f64 {
    net.layers()
        .iter()
        .flat_map(|l| l.weights().iter().chain(l.bias()))
        .map(|v| v * v)
        .sum()
}

fn batch_loss(net: &ReluNetwork, inputs: &[&[f64]], targets: &[&[f64]], lambda: f64) -> f64 {
    let mse: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            let p = net.forward_unchecked(x);
            p.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    mse / inputs.len() as f64 + lambda * squared_norm(net)
}

fn batch_gradients(net: &ReluNetwork, inputs: &[&[f64]], targets: &[&[f64]], lambda: f64) -> Gradients {
    let depth = net.depth();
    let mut grads: Vec<DenseLayer> = net
        .layers()
        .iter()
        .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
        .collect();
    let scale = 2.0 / inputs.len() as f64;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    for (x, y) in inputs.iter().zip(targets) {
        acts.clear();
        acts.push(x.to_vec());
        for (k, layer) in net.layers().iter().enumerate() {
            let mut t = layer.affine(&acts[k]);
            if k + 1 < depth {
                // Post-activations double as the ReLU mask in the backward pass.
                t.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(t);
        }
        let mut delta: Vec<f64> = acts[depth].iter().zip(y.iter()).map(|(p, t)| scale * (p - t)).collect();
        for k in (0..depth).rev() {
            let layer = &net.layers()[k];
            let g = &mut grads[k];
            let prev = &acts[k];
            for (i, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias_mut()[i] += d;
                let row = &mut g.weights_mut()[i * prev.len()..(i + 1) * prev.len()];
                for (w, a) in row.iter_mut().zip(prev) {
                    *w += d * a;
                }
            }
            if k == 0 {
                break;
            }
            // Subgradient 0 at t = 0: a node with zero output passes nothing back.
            let mut next = vec![0.0; layer.inputs()];
            for (i, d) in delta.iter().enumerate() {
                for (n, w) in next.iter_mut().zip(layer.row(i)) {
                    *n += d * w;
                }
            }
            for (n, a) in next.iter_mut().zip(prev) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }
    if lambda != 0.0 {
        for (g, l) in grads.iter_mut().zip(net.layers()) {
            for (gw, w) in g.weights_mut().iter_mut().zip(l.weights()) {
                *gw += 2.0 * lambda * w;
            }
            for (gb, b) in g.bias_mut().iter_mut().zip(l.bias()) {
                *gb += 2.0 * lambda * b;
            }
        }
    }
    Gradients { layers: grads }
}

fn rows(data: &LabeledDataset) -> (Vec<&[f64]>, Vec<&[f64]>) {
    (
        data.inputs().iter().map(Vec::as_slice).collect(),
        data.targets().iter().map(Vec::as_slice).collect(),
    )
}

fn check_batch(net: &ReluNetwork, batch: &LabeledDataset) -> Result<(), NetError> {
    if batch.is_empty() {
        return Err(NetError::Argument("empty batch".into()));
    }
    batch.check_against(net)
}

/// `(1/N) Σ ||y - f(x)||² + λ ||Θ||²`
pub fn loss(net: &ReluNetwork, batch: &LabeledDataset, lambda: f64) -> Result<f64, NetError> {
    check_batch(net, batch)?;
    let (x, y) = rows(batch);
    Ok(batch_loss(net, &x, &y, lambda))
}

/// Exact reverse-mode gradient of [`loss`].
pub fn gradients(net: &ReluNetwork, batch: &LabeledDataset, lambda: f64) -> Result<Gradients, NetError> {
    check_batch(net, batch)?;
    let (x, y) = rows(batch);
    Ok(batch_gradients(net, &x, &y, lambda))
}

fn apply(net: &mut ReluNetwork, grads: &Gradients, learning_rate: f64) {
    for (l, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        for (w, d) in l.weights_mut().iter_mut().zip(g.weights()) {
            *w -= learning_rate * d;
        }
        for (b, d) in l.bias_mut().iter_mut().zip(g.bias()) {
            *b -= learning_rate * d;
        }
    }
}

/// One plain SGD step: every parameter moves by `-learning_rate * gradient`.
pub fn sgd_step(net: &mut ReluNetwork, batch: &LabeledDataset, learning_rate: f64, lambda: f64) -> Result<(), NetError> {
    let g = gradients(net, batch, lambda)?;
    apply(net, &g, learning_rate);
    Ok(())
}

#[derive(Debug, Clone)]
struct Standardizer {
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|j| {
            let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Standardizer {
    fn fit(data: &LabeledDataset) -> Self {
        let (x_mean, x_std) = moments(data.inputs());
        let (y_mean, y_std) = moments(data.targets());
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    fn identity(data: &LabeledDataset) -> Self {
        Self {
            x_mean: vec![0.0; data.input_dim()],
            x_std: vec![1.0; data.input_dim()],
            y_mean: vec![0.0; data.target_dim()],
            y_std: vec![1.0; data.target_dim()],
        }
    }

    fn transform(&self, data: &LabeledDataset) -> LabeledDataset {
        let map = |rows: &[Vec<f64>], mean: &[f64], std: &[f64]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect())
                .collect()
        };
        LabeledDataset::new(
            map(data.inputs(), &self.x_mean, &self.x_std),
            map(data.targets(), &self.y_mean, &self.y_std),
        )
        .expect("standardization preserves shape and finiteness")
    }

    /// Folds the input and output affine maps into the network so it maps raw
    /// units to raw units.
    fn fold(&self, net: &mut ReluNetwork) {
        let first = &mut net.layers_mut()[0];
        let n_in = first.inputs();
        for i in 0..first.outputs() {
            let mut shift = 0.0;
            for j in 0..n_in {
                let w = &mut first.weights_mut()[i * n_in + j];
                *w /= self.x_std[j];
                shift += *w * self.x_mean[j];
            }
            first.bias_mut()[i] -= shift;
        }
        let last = net.layers_mut().last_mut().unwrap();
        let n_in = last.inputs();
        for i in 0..last.outputs() {
            let s = self.y_std[i];
            last.weights_mut()[i * n_in..(i + 1) * n_in].iter_mut().for_each(|w| *w *= s);
            last.bias_mut()[i] = last.bias()[i] * s + self.y_mean[i];
        }
    }
}

/// Trains `net` by minibatch SGD and returns the parameters with the lowest
/// full-dataset loss observed at the end of any epoch.
///
/// With `standardize` enabled (the default) the initial `net` is taken to act
/// on standardized coordinates, which is what [`crate::net::he_initialize`]
/// assumes; the returned network acts on raw units.
pub fn sgd_train(net: &ReluNetwork, dataset: &LabeledDataset, config: &TrainConfig) -> Result<ReluNetwork, NetError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(NetError::Argument("empty dataset".into()));
    }
    dataset.check_against(net)?;
    let scaler = if config.standardize {
        Standardizer::fit(dataset)
    } else {
        Standardizer::identity(dataset)
    };
    let data = scaler.transform(dataset);
    let (all_x, all_y) = rows(&data);

    let mut rng = rng::stream(config.seed, "train");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut current = net.clone();
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut bx: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut by: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| all_x[i]));
            by.extend(chunk.iter().map(|&i| all_y[i]));
            let g = batch_gradients(&current, &bx, &by, config.l2_lambda);
            apply(&mut current, &g, config.learning_rate);
        }
        let l = batch_loss(&current, &all_x, &all_y, config.l2_lambda);
        if l < best_loss {
            best_loss = l;
            best.clone_from(&current);
        }
    }
    if config.epochs == 0 {
        best = current;
    }
    if best.layers().iter().any(|l| l.weights().iter().chain(l.bias()).any(|v| !v.is_finite())) {
        return Err(NetError::NonFinite("training diverged; lower the learning rate".into()));
    }
    scaler.fold(&mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::he_initialize;
    use rand::Rng as _;

    fn single(x: f64, y: f64) -> LabeledDataset {
        LabeledDataset::new(vec![vec![x]], vec![vec![y]]).unwrap()
    }

    #[test]
    fn loss_basics() {
        let zero = ReluNetwork::from_rows(vec![(vec![vec![0.0]], vec![0.0]), (vec![vec![0.0]], vec![0.0])]).unwrap();
        let data = LabeledDataset::new(vec![vec![1.0], vec![-3.0]], vec![vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(loss(&zero, &data, 0.7).unwrap(), 0.0);
        assert_eq!(loss(&zero, &single(0.0, 1.0), 0.0).unwrap(), 1.0);
        // y = 2x with a single weight: perfect fit, pure regularizer 1 * 2^2.
        let w = ReluNetwork::from_rows(vec![(vec![vec![2.0]], vec![0.0])]).unwrap();
        assert_eq!(loss(&w, &single(1.5, 3.0), 1.0).unwrap(), 4.0);
        let empty = LabeledDataset::new(vec![], vec![]).unwrap();
        assert!(loss(&w, &empty, 0.0).is_err());
    }

    #[test]
    fn gradient_at_perfect_fit() {
        let w = ReluNetwork::from_rows(vec![(vec![vec![2.0]], vec![0.0])]).unwrap();
        let g = gradients(&w, &single(1.5, 3.0), 0.0).unwrap();
        assert_eq!(g.layers[0].weights(), &[0.0]);
        assert_eq!(g.layers[0].bias(), &[0.0]);
        let g = gradients(&w, &single(1.5, 3.0), 0.25).unwrap();
        assert_eq!(g.layers[0].weights(), &[2.0 * 0.25 * 2.0]);
    }

    fn central_difference(net: &ReluNetwork, data: &LabeledDataset, lambda: f64, k: usize, idx: usize, bias: bool) -> f64 {
        let h = 1e-5;
        let eval = |delta: f64| {
            let mut n = net.clone();
            let l = &mut n.layers_mut()[k];
            if bias {
                l.bias_mut()[idx] += delta;
            } else {
                l.weights_mut()[idx] += delta;
            }
            loss(&n, data, lambda).unwrap()
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng::stream(5, "fd");
        let mut checked = 0;
        for seed in 0..5 {
            let mut net = he_initialize(&[2, 5, 1], seed).unwrap();
            for l in net.layers_mut() {
                l.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            // Stay away from kinks so the loss is differentiable at the probe.
            let near_kink = xs.iter().any(|x| net.forward_trace(x).unwrap().pre[1].iter().any(|t| t.abs() < 1e-3));
            if near_kink {
                continue;
            }
            checked += 1;
            let ys = xs.iter().map(|x| vec![x[0] * x[1] + 0.3]).collect();
            let data = LabeledDataset::new(xs, ys).unwrap();
            let g = gradients(&net, &data, 0.01).unwrap();
            for k in 0..net.depth() {
                for i in 0..net.layers()[k].weights().len() {
                    let fd = central_difference(&net, &data, 0.01, k, i, false);
                    let an = g.layers[k].weights()[i];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "w[{k}][{i}] {an} vs {fd}");
                }
                for i in 0..net.layers()[k].bias().len() {
                    let fd = central_difference(&net, &data, 0.01, k, i, true);
                    let an = g.layers[k].bias()[i];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "b[{k}][{i}] {an} vs {fd}");
                }
            }
        }
        assert!(checked >= 3, "too few kink-free instances");
    }

    #[test]
    fn sgd_step_moves_by_negative_gradient() {
        let net = he_initialize(&[2, 4, 1], 2).unwrap();
        let data = LabeledDataset::new(vec![vec![0.3, -0.4], vec![0.9, 0.1]], vec![vec![1.0], vec![-1.0]]).unwrap();
        let g = gradients(&net, &data, 0.1).unwrap();
        let mut stepped = net.clone();
        sgd_step(&mut stepped, &data, 0.05, 0.1).unwrap();
        for ((a, b), gl) in net.layers().iter().zip(stepped.layers()).zip(&g.layers) {
            for ((w0, w1), d) in a.weights().iter().zip(b.weights()).zip(gl.weights()) {
                assert_eq!(*w1, w0 - 0.05 * d);
            }
        }
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        for seed in 0..10 {
            let net = he_initialize(&[3, 6, 1], seed).unwrap();
            let mut rng = rng::stream(seed, "batch");
            let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ys = xs.iter().map(|x| vec![x.iter().sum::<f64>().sin()]).collect();
            let data = LabeledDataset::new(xs, ys).unwrap();
            let before = loss(&net, &data, 0.01).unwrap();
            let mut stepped = net.clone();
            sgd_step(&mut stepped, &data, 1e-6, 0.01).unwrap();
            assert!(loss(&stepped, &data, 0.01).unwrap() <= before);
        }
    }

    fn line_data() -> LabeledDataset {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![-1.0 + 2.0 * i as f64 / 49.0]).collect();
        let ys = xs.iter().map(|x| vec![2.0 * x[0] + 1.0]).collect();
        LabeledDataset::new(xs, ys).unwrap()
    }

    #[test]
    fn fits_a_line() {
        let data = line_data();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 0.05,
            seed: 1,
            ..TrainConfig::default()
        };
        let net = sgd_train(&he_initialize(&[1, 4, 1], 1).unwrap(), &data, &cfg).unwrap();
        let mse = loss(&net, &data, 0.0).unwrap();
        assert!(mse <= 1e-3, "mse {mse}");
        let again = sgd_train(&he_initialize(&[1, 4, 1], 1).unwrap(), &data, &cfg).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn rejects_bad_config() {
        let data = line_data();
        let net = he_initialize(&[1, 4, 1], 1).unwrap();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { l2_lambda: -1.0, ..TrainConfig::default() },
        ] {
            assert!(sgd_train(&net, &data, &cfg).is_err());
        }
        let wrong = he_initialize(&[2, 4, 1], 1).unwrap();
        assert!(matches!(sgd_train(&wrong, &data, &TrainConfig::default()), Err(NetError::Dimension(_))));
    }
}
