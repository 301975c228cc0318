use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

/// Train ReLU networks, tighten their bounds and solve the MILP models they
/// appear in.
///
/// Exit codes: 0 success or optimal, 1 usage or input error, 2 infeasible
/// (or, for `verify`, a violated bound), 3 time limit with a solution,
/// 4 time limit without one.
#[derive(Debug, Parser)]
#[command(name = "reluopt", version)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a network to a CSV dataset or to samples of a random quadratic.
    Train(TrainArgs),
    /// Tighten node bounds of a network over an input box.
    Tighten(TightenArgs),
    /// Minimize one network subject to another equalling a level.
    SolveQn(SolveQnArgs),
    /// Maximize oil production over a routing network.
    SolveProduction(ProductionArgs),
    /// Tighten random networks under shrinking output boxes.
    StudyOutputBounds(StudyArgs),
    /// Check sampled forward passes against a bounds file.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with a header row; the first `dims[0]` columns are inputs.
    #[arg(long, alias = "data", conflicts_with = "quadratic", required_unless_present = "quadratic")]
    pub dataset: Option<PathBuf>,
    /// Layer sizes, e.g. `2,20,10,1`. Defaults to the surrogate shape for `--quadratic`.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Dimension of a generated quadratic to fit instead of a dataset.
    #[arg(long)]
    pub quadratic: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON summary with the training MAPE.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TightenArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// `[lo,hi]`, a list of intervals, or a JSON file.
    #[arg(long)]
    pub input_box: String,
    #[arg(long)]
    pub output_box: Option<String>,
    /// lrr, rr, lr, semi-rr or no-r, with an optional limit such as `no-r(60)`.
    #[arg(long, default_value = "lrr")]
    pub scheme: String,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Seconds per MILP subproblem; overrides a limit in the scheme string.
    #[arg(long)]
    pub sub_time_limit: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveQnArgs {
    /// Network to minimize.
    #[arg(long)]
    pub net1: PathBuf,
    /// Network held at the level.
    #[arg(long)]
    pub net2: PathBuf,
    /// Level for the second network; defaults to its median over box samples.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub alpha_samples: usize,
    #[arg(long, default_value = "no-r")]
    pub scheme: String,
    #[command(flatten)]
    pub solve: SolveFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Instance {
    Tiny,
    Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Compact,
    Full,
}

#[derive(Debug, Args)]
pub struct ProductionArgs {
    /// Built-in instance; `field` trains its networks first and is slow.
    #[arg(long, value_enum, default_value_t = Instance::Tiny, conflicts_with = "topology")]
    pub instance: Instance,
    /// Topology JSON; needs `--well-nets` and `--riser-nets`.
    #[arg(long, requires_all = ["well_nets", "riser_nets"])]
    pub topology: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub well_nets: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub riser_nets: Vec<PathBuf>,
    #[arg(long, default_value = "no-r")]
    pub scheme: String,
    #[arg(long, value_enum, default_value_t = Style::Compact)]
    pub style: Style,
    #[command(flatten)]
    pub solve: SolveFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveFlags {
    /// Wall-clock limit for the final MILP, in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Seconds per bound tightening subproblem.
    #[arg(long)]
    pub sub_time_limit: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub gap: f64,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// JSON with `dims`, `seeds`, `levels` and `schemes`; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for `mad.csv`, `ratios.csv` and `timing.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub bounds: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Only inputs whose outputs land in this box are checked.
    #[arg(long)]
    pub output_box: Option<String>,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Process outcome, mapped onto the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Failure = 1,
    /// Infeasible model, or a sampled trace outside the checked bounds.
    Infeasible = 2,
    LimitWithSolution = 3,
    LimitWithoutSolution = 4,
}

fn main() -> ExitCode {
    let config = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Status::Failure as u8 } else { 0 });
        }
    };
    match commands::run(config.command) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Failure as u8)
        }
    }
}
