use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "slowman", version, about = "Slow invariant manifold reconstruction by trajectory optimization")]
pub struct Cli {
    /// Worker threads for grid evaluation (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct one manifold point.
    Solve(SolveArgs),
    /// Reconstruct a 1-D or 2-D grid of manifold points.
    Sweep(SweepArgs),
    /// Scan the objective over a 2-D grid of initial compositions.
    Landscape(LandscapeArgs),
    /// Solve, re-solve from a later point of the optimal trajectory and compare.
    Consistency(ConsistencyArgs),
    /// Compute ILDM points over a progress grid.
    Ildm(IldmArgs),
    /// Print the built-in mechanisms.
    ListMechanisms,
}

#[derive(Debug, Args, Clone)]
pub struct MechanismArgs {
    /// Built-in name or path to a mechanism JSON file.
    #[arg(long)]
    pub mechanism: String,
    /// Davis–Skodje stiffness parameter.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Temperature in K (ozone and JSON mechanisms).
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Conservation constants, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub conservation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bdf,
    Radau,
}

#[derive(Debug, Args, Clone)]
pub struct NumericArgs {
    /// Fixed horizon t_f.
    #[arg(long, conflicts_with = "epsilon")]
    pub tf: Option<f64>,
    /// Stop where ||f|| drops to this value.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long, value_enum, default_value = "bdf")]
    pub method: MethodArg,
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Directory for result files and the run manifest; stdout otherwise.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ProblemArgs {
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    /// A, B, C or metric:<file.json>.
    #[arg(long, default_value = "B")]
    pub criterion: String,
    /// Progress variable `name=value` or `name=min:max:count` (repeatable).
    #[arg(long, required = true)]
    pub progress: Vec<String>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Starting composition, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub guess: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Solve every node from the default start instead of the previous solution.
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Restart time on the first optimal trajectory.
    #[arg(long, conflicts_with = "t1_progress")]
    pub t1: Option<f64>,
    /// Restart where species `name` has covered `fraction` of its way to equilibrium (`name=fraction`).
    #[arg(long)]
    pub t1_progress: Option<String>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    #[arg(long, default_value = "C")]
    pub criterion: String,
    /// Two axes `name=min:max[:count]`: progress axis first, then the minimized axis.
    #[arg(long, required = true, num_args = 1)]
    pub progress: Vec<String>,
    /// Grid size `n1xn2`; overrides the axis counts.
    #[arg(long)]
    pub grid: Option<String>,
    /// Species whose axis is logarithmic (repeatable).
    #[arg(long)]
    pub log_axis: Vec<String>,
    /// Value `name=value` for a species that no axis or conservation fixes.
    #[arg(long)]
    pub pin: Vec<String>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct IldmArgs {
    #[command(flatten)]
    pub mechanism: MechanismArgs,
    /// Progress variable `name=value` or `name=min:max:count`; the count of flags is the manifold dimension.
    #[arg(long, required = true)]
    pub progress: Vec<String>,
    /// Seed for the first Newton solve: a criterion (A, B, C) or `center`.
    #[arg(long, default_value = "B")]
    pub seed: String,
    /// Seed every node afresh instead of continuing from the previous point.
    #[arg(long)]
    pub no_warm_start: bool,
    /// Residual tolerance relative to max(1, ||f||).
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
