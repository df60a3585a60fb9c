mod cache;
mod commands;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use schur_ode::linalg::LinalgError;
use schur_ode::Error;

#[derive(Parser, Debug)]
#[command(name = "schur-ode", version, about = "Closed-form and Galerkin/Legendre ODE solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a linear system y' = Ay in closed form and compare with the matrix exponential.
    SolveLinear(SolveLinearArgs),
    /// Build the Galerkin operator, projection and initial basis vector.
    Linearize(LinearizeArgs),
    /// Simulate a polynomial system with a perturbation scheme and compare with RK4.
    Simulate(SimulateArgs),
    /// Write a preset system file.
    Examples(ExamplesArgs),
}

#[derive(Args, Debug)]
pub struct SolveLinearArgs {
    /// Linear system file.
    #[arg(long, conflicts_with_all = ["matrix", "random"])]
    pub system: Option<PathBuf>,
    /// Matrix container file holding A.
    #[arg(long, conflicts_with = "random")]
    pub matrix: Option<PathBuf>,
    /// Random N×N matrix with eigenvalue separation ≥ 0.1.
    #[arg(long, value_name = "N")]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial state "v1,v2,…" (random when omitted with --random).
    #[arg(long)]
    pub ic: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub x1: f64,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub eps_eig: Option<f64>,
    /// QR iterations allowed per eigenvalue.
    #[arg(long, default_value_t = schur_ode::linalg::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub sigma: usize,
    /// Value for the single perturbation parameter.
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Per-source parameter values "name=value,…".
    #[arg(long)]
    pub eps: Option<String>,
    /// Initial state "v1,v2,…" in the original variables.
    #[arg(long, allow_hyphen_values = true)]
    pub ic: Option<String>,
    /// Scale factors "Y1,…"; the basis is built on y/Y.
    #[arg(long)]
    pub scale: Option<String>,
    /// Autonomization constant for fields depending on x (z = τ x).
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Run assembly on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for the matrix files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeName {
    Direct,
    ExactDecomp,
    Approx,
    HigherOrder,
    MultiSource,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SchemeName::Direct)]
    pub scheme: SchemeName,
    /// Perturbation order for higher-order and multi-source schemes.
    #[arg(long, default_value_t = 1)]
    pub tau: usize,
    /// Reference parameter for the multi-source scheme (default: largest source value).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub x0: f64,
    /// End of the window (default: x0 + 2π).
    #[arg(long, allow_negative_numbers = true)]
    pub x1: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the operator matrices, H and h0.
    #[arg(long)]
    pub emit_matrices: bool,
    /// Directory for --emit-matrices.
    #[arg(long, default_value = ".")]
    pub matrix_dir: PathBuf,
    #[arg(long)]
    pub eps_eig: Option<f64>,
    /// RK4 reference step.
    #[arg(long, default_value_t = 1e-4)]
    pub rk_step: f64,
    #[arg(long, default_value_t = schur_ode::linalg::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Duffing,
    Vanderpol,
    VanderpolScaled,
}

#[derive(Args, Debug)]
pub struct ExamplesArgs {
    #[arg(value_enum)]
    pub name: PresetName,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Linalg(LinalgError::NoConvergence { .. }) => 3,
        Error::Capacity { .. } => 4,
        Error::Divergence { .. } => 5,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveLinear(a) => commands::solve_linear(&a),
        Command::Linearize(a) => commands::linearize(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Examples(a) => commands::examples(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
