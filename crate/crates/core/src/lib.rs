//! Exact MILP encodings of ReLU networks, bound tightening, and a small
//! LP / branch-and-bound engine to solve the resulting models.

pub mod bt;
pub mod encode;
pub mod error;
pub mod experiments;
pub mod lp;
pub mod milp;
pub mod net;
pub mod rng;
pub mod trainer;

pub use bt::{tighten, tighten_from, BtKind, BtParams, BtReport, BtScheme};
pub use encode::{
    build_problem, embed_network, embed_network_with, BoundSet, BoxBounds, EmbedOptions, EncodingStyle, NetworkEmbedding,
    NodeId, RelaxSpec,
};
pub use error::{BtError, EncodeError, ExperimentError, LpError, MilpError, NetError};
pub use net::{he_initialize, load_network, mape, save_network, DenseLayer, LabeledDataset, ReluNetwork, Trace};
pub use lp::{solve_lp, LinearModel, LpSolution, LpStatus, Relation, Sense, VarId};
pub use milp::{solve_milp, MilpModel, MilpResult, MilpSolver, MilpStatus, SolveParams};
pub use trainer::{sgd_train, TrainConfig};
