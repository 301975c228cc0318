use thiserror::Error;

/// Errors raised while constructing, evaluating or (de)serializing networks
/// and datasets.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from the LP engine. Infeasibility and unboundedness are not errors;
/// they are reported through [`crate::lp::LpStatus`].
#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

#[derive(Debug, Error)]
pub enum MilpError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("LP relaxation is unbounded")]
    Unbounded,
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("node ({node},{layer}) has an infinite bound; run interval tightening first")]
    InfiniteBound { layer: usize, node: usize },
    #[error("node ({node},{layer}) has lower bound {lower} above upper bound {upper}")]
    InvertedBound {
        layer: usize,
        node: usize,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable name collision: {0}")]
    NameCollision(String),
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("degenerate ReLU: bounds [{lower}, {upper}] do not straddle zero")]
    DegenerateRelu { lower: f64, upper: f64 },
    #[error("malformed bounds document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

impl From<LpError> for EncodeError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::InvalidModel(msg) if msg.starts_with("duplicate variable name") => Self::NameCollision(msg),
            other => Self::Milp(MilpError::Lp(other)),
        }
    }
}

#[derive(Debug, Error)]
pub enum BtError {
    #[error("bound tightening found node {node} of layer {layer} infeasible; the bounded network admits no input")]
    Infeasible { layer: usize, node: usize },
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("invalid box: {0}")]
    Box(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid of {0} points exceeds the 1e7 limit")]
    GridTooLarge(u64),
    #[error("topology violation: {0}")]
    Topology(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
