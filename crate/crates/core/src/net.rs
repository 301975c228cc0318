//! Fully connected ReLU networks: data model, exact evaluation, He
//! initialization, accuracy metrics and the JSON network file format.

use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::rng;

/// One affine layer. `weights` is row-major with one row per output node, so
/// row `i` holds the weights into node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, NetError> {
        if inputs == 0 || outputs == 0 {
            return Err(NetError::Dimension("layers need at least one node".into()));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(NetError::Dimension(format!(
                "layer {inputs}->{outputs} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    /// Weights into node `row`.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.weights[row * self.inputs..(row + 1) * self.inputs]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `W x + b`
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(i), x);
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A feedforward network with ReLU hidden layers and an affine output layer.
///
/// Layer 0 is the input layer; `layers[k - 1]` maps layer `k - 1` to layer `k`
/// for `k = 1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Dimension("a network needs at least one layer".into()));
        }
        let mut layer_dims = vec![layers[0].inputs];
        for (k, layer) in layers.iter().enumerate() {
            if layer.inputs != layer_dims[k] {
                return Err(NetError::Dimension(format!(
                    "layer {} expects {} inputs but layer {} has {} nodes",
                    k + 1,
                    layer.inputs,
                    k,
                    layer_dims[k]
                )));
            }
            layer_dims.push(layer.outputs);
        }
        Ok(Self { layer_dims, layers })
    }

    /// Builds a network from `(W, b)` pairs with `W` given as rows.
    pub fn from_rows(params: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self, NetError> {
        let mut layers = Vec::with_capacity(params.len());
        for (k, (w, b)) in params.into_iter().enumerate() {
            let outputs = w.len();
            let inputs = w.first().map_or(0, Vec::len);
            if let Some(bad) = w.iter().position(|r| r.len() != inputs) {
                return Err(NetError::Dimension(format!(
                    "layer {}: weight row {bad} has {} entries, expected {inputs}",
                    k + 1,
                    w[bad].len()
                )));
            }
            layers.push(DenseLayer::new(inputs, outputs, w.concat(), b)?);
        }
        Self::new(layers)
    }

    /// Node counts `(n_0, ..., n_K)`.
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Number of affine layers `K`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_nodes(&self) -> usize {
        self.layer_dims[1..self.layer_dims.len() - 1].iter().sum()
    }

    /// The layer producing layer `k` (1-based, as in `W^k`).
    pub fn layer(&self, k: usize) -> &DenseLayer {
        &self.layers[k - 1]
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x0: &[f64]) -> Result<(), NetError> {
        if x0.len() != self.input_dim() {
            return Err(NetError::Dimension(format!(
                "input has {} entries, network expects {}",
                x0.len(),
                self.input_dim()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x0: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x0)?;
        Ok(self.forward_unchecked(x0))
    }

    pub(crate) fn forward_unchecked(&self, x0: &[f64]) -> Vec<f64> {
        let mut x = x0.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.affine(&x);
            if k < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        x
    }

    /// Pre-activation values `t^k` for every layer, `k = 0..=K`.
    pub fn forward_trace(&self, x0: &[f64]) -> Result<Trace, NetError> {
        self.check_input(x0)?;
        let mut pre = Vec::with_capacity(self.layer_dims.len());
        pre.push(x0.to_vec());
        let mut x = x0.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let t = layer.affine(&x);
            if k < last {
                x = t.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(t);
        }
        Ok(Trace { pre })
    }
}

/// Per-node pre-activation values of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    /// Positive part `x` of a hidden node (the ReLU output).
    pub fn post(&self, layer: usize, node: usize) -> f64 {
        self.pre[layer][node].max(0.0)
    }

    /// Negative part `s` of a hidden node.
    pub fn slack(&self, layer: usize, node: usize) -> f64 {
        (-self.pre[layer][node]).max(0.0)
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<(), NetError> {
    if layer_dims.len() < 2 {
        return Err(NetError::Dimension("need at least input and output layers".into()));
    }
    if layer_dims.contains(&0) {
        return Err(NetError::Dimension("layers need at least one node".into()));
    }
    Ok(())
}

/// He initialization: `W^k ~ N(0, 2/n_{k-1})`, zero biases.
pub fn he_initialize(layer_dims: &[usize], seed: u64) -> Result<ReluNetwork, NetError> {
    validate_dims(layer_dims)?;
    let mut rng = rng::stream(seed, "init");
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).unwrap();
            let weights = (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect();
            DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias: vec![0.0; w[1]],
            }
        })
        .collect();
    ReluNetwork::new(layers)
}

/// Input/target pairs used for training and accuracy metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self, NetError> {
        if inputs.len() != targets.len() {
            return Err(NetError::Dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for rows in [&inputs, &targets] {
            if let Some(first) = rows.first() {
                if rows.iter().any(|r| r.len() != first.len()) {
                    return Err(NetError::Dimension("ragged dataset rows".into()));
                }
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite("dataset".into()));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub(crate) fn check_against(&self, net: &ReluNetwork) -> Result<(), NetError> {
        if self.is_empty() {
            return Ok(());
        }
        if self.input_dim() != net.input_dim() || self.target_dim() != net.output_dim() {
            return Err(NetError::Dimension(format!(
                "dataset is {}->{}, network is {}->{}",
                self.input_dim(),
                self.target_dim(),
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(())
    }

    /// Reads a CSV with a header row, `n_inputs` input columns and the
    /// remaining columns as targets.
    pub fn from_csv<R: Read>(reader: R, n_inputs: usize) -> Result<Self, NetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let width = rdr
            .headers()
            .map_err(|e| NetError::Malformed(e.to_string()))?
            .len();
        if n_inputs == 0 || width <= n_inputs {
            return Err(NetError::Dimension(format!(
                "{width} columns cannot hold {n_inputs} inputs and at least one target"
            )));
        }
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| NetError::Malformed(e.to_string()))?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| NetError::Malformed(format!("row {}: {e}", line + 2)))?;
            if vals.len() != width {
                return Err(NetError::Dimension(format!("row {} has {} fields", line + 2, vals.len())));
            }
            targets.push(vals[n_inputs..].to_vec());
            inputs.push(vals[..n_inputs].to_vec());
        }
        Self::new(inputs, targets)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), NetError> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.target_dim()).map(|i| format!("y{i}")))
            .collect();
        let io = |e: csv::Error| NetError::Malformed(e.to_string());
        w.write_record(&header).map_err(io)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            w.write_record(x.iter().chain(y).map(|v| v.to_string())).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How [`mape_with`] treats targets equal to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroTargetPolicy {
    #[default]
    Error,
    Exclude,
}

/// Mean absolute percentage error, `100 * mean |y - ŷ| / |y|`.
pub fn mape(net: &ReluNetwork, data: &LabeledDataset) -> Result<f64, NetError> {
    mape_with(net, data, ZeroTargetPolicy::Error)
}

pub fn mape_with(net: &ReluNetwork, data: &LabeledDataset, policy: ZeroTargetPolicy) -> Result<f64, NetError> {
    if data.is_empty() {
        return Err(NetError::Argument("empty dataset".into()));
    }
    data.check_against(net)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let y_hat = net.forward_unchecked(x);
        for (yi, pi) in y.iter().zip(&y_hat) {
            if *yi == 0.0 {
                match policy {
                    ZeroTargetPolicy::Error => {
                        return Err(NetError::Argument("target equal to zero".into()));
                    }
                    ZeroTargetPolicy::Exclude => continue,
                }
            }
            sum += (yi - pi).abs() / yi.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(NetError::Argument("every target is zero".into()));
    }
    Ok(100.0 * sum / count as f64)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    layer_dims: Vec<usize>,
    layers: Vec<LayerDoc>,
}

/// Serializes to the JSON network document. Floats are written in shortest
/// round-trip form, so `load_network(save_network(n)) == n` bit for bit.
pub fn save_network(net: &ReluNetwork) -> String {
    let doc = NetworkDoc {
        layer_dims: net.layer_dims.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerDoc {
                w: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                b: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("network documents always serialize")
}

pub fn load_network(text: &str) -> Result<ReluNetwork, NetError> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| NetError::Malformed(e.to_string()))?;
    validate_dims(&doc.layer_dims)?;
    if doc.layers.len() + 1 != doc.layer_dims.len() {
        return Err(NetError::Dimension(format!(
            "{} layer dims imply {} layers, found {}",
            doc.layer_dims.len(),
            doc.layer_dims.len() - 1,
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (k, l) in doc.layers.into_iter().enumerate() {
        let (inputs, outputs) = (doc.layer_dims[k], doc.layer_dims[k + 1]);
        if l.w.len() != outputs {
            return Err(NetError::Dimension(format!(
                "layer {} has {} weight rows, expected {outputs}",
                k + 1,
                l.w.len()
            )));
        }
        if let Some(i) = l.w.iter().position(|r| r.len() != inputs) {
            return Err(NetError::Dimension(format!(
                "layer {} row {i} has {} weights, expected {inputs}",
                k + 1,
                l.w[i].len()
            )));
        }
        layers.push(DenseLayer::new(inputs, outputs, l.w.concat(), l.b)?);
    }
    ReluNetwork::new(layers)
}
