use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "shellmg", version, about = "Tensor-product multigrid for the pressure correction on a thin spherical shell")]
pub struct Cli {
    /// Worker threads for data-parallel kernels (0 = all cores, 1 = reproducible reference).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one pressure-correction system and write its convergence history.
    Solve(SolveArgs),
    /// Fit time per iteration against column height.
    Timing(TimingArgs),
    /// Run the dense theory checks.
    Verify(VerifyArgs),
    /// Describe the grid hierarchy.
    GridInfo(GridInfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestCaseArg {
    BalancedFlow,
    ExternalProfiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    Richardson,
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecArg {
    Full,
    Factorized,
    Partial,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherArg {
    Sor,
    Jacobi,
}

/// Problem and preconditioner settings shared by `solve` and `timing`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ProblemArgs {
    /// Finest refinement level of the icosahedral grid.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Number of vertical layers.
    #[arg(long, default_value_t = 64)]
    pub nr: usize,
    /// Buoyancy frequency in 1/s; defaults to the separable value.
    #[arg(long = "N")]
    pub buoyancy: Option<f64>,
    #[arg(long, value_enum, default_value_t = TestCaseArg::BalancedFlow)]
    pub test_case: TestCaseArg,
    /// Profile file for the external test case.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Profile file for the preconditioner only.
    #[arg(long)]
    pub prec_profiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrecArg::Full)]
    pub prec: PrecArg,
    #[arg(long, default_value_t = 2)]
    pub nu_pre: usize,
    #[arg(long, default_value_t = 2)]
    pub nu_post: usize,
    #[arg(long, value_enum, default_value_t = SmootherArg::Sor)]
    pub smoother: SmootherArg,
    /// Relaxation factor of the smoother, in (0, 2).
    #[arg(long, default_value_t = 1.0)]
    pub relax: f64,
    /// Coarse solve: `direct`, or a number of smoothing sweeps.
    #[arg(long, default_value = "direct")]
    pub coarse: String,
    /// V-cycles per preconditioner application.
    #[arg(long, default_value_t = 1)]
    pub mu_cycles: usize,
    /// Horizontal acoustic Courant number fixing ω.
    #[arg(long, default_value_t = 10.0)]
    pub courant: f64,
    /// Seed of the random right-hand side.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = SolverArg::Richardson)]
    pub solver: SolverArg,
    /// Relative residual target.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Output directory for `history.csv` and `summary.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TimingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = SolverArg::Richardson)]
    pub solver: SolverArg,
    /// Column heights to time.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
    pub nr_list: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 1)]
    pub warmups: usize,
    /// Output directory for `timing.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Level of the decoupling checks.
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Level of the perturbation and smoothing checks.
    #[arg(long, default_value_t = 1)]
    pub perturbation_level: usize,
    #[arg(long, default_value_t = 8)]
    pub nr: usize,
    #[arg(long, default_value_t = 1)]
    pub mu_cycles: usize,
    #[arg(long, default_value_t = 10.0)]
    pub courant: f64,
    /// Separability defects of the perturbation cases.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25")]
    pub epsilons: Vec<f64>,
    /// Non-separable case where mode decoupling must fail.
    #[arg(long, default_value_t = 1.23)]
    pub control_epsilon: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory for `theory.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridInfoArgs {
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
}
