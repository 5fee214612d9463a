use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gendyne", version, about = "General-dyne unravellings of the thermal master equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one conditional trajectory and write its record.
    Trajectory(RunArgs),
    /// Ensemble statistics of the conditional moments over time.
    Ensemble(RunArgs),
    /// Completeness, eigen-equation and outcome-law audits of the POVM.
    PovmAudit(RunArgs),
    /// Compare the optical scheme with the POVM eigenvectors.
    SchemeCheck(RunArgs),
    /// Draw outcomes from the optical scheme on a thermal bath.
    SchemeSample(RunArgs),
    /// Steady conditional variance against the squeezing bound, per Υ.
    SteadyScan(RunArgs),
    /// Re-run the configuration recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Unravelling parameter Υ in [-1, 1]; steady-scan takes a comma-separated list.
    #[arg(long, allow_negative_numbers = true, value_delimiter = ',')]
    pub upsilon: Vec<f64>,
    /// Bath photon number N.
    #[arg(long)]
    pub n_bath: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Trajectories per ensemble (scheme-sample: number of draws).
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Fock truncation.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    /// Time stepper of the Fock engine.
    #[arg(long, value_enum)]
    pub stepper: Option<StepperArg>,
    /// Fock substeps per record step.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Initial state: vacuum, thermal:N, coherent:RE,IM or fock:N.
    #[arg(long)]
    pub init: Option<String>,
    /// Start of the steady-state window (default: half the run).
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Ensemble sampling interval in steps.
    #[arg(long)]
    pub sample_every: Option<usize>,
    /// Outcome θ₁,θ₂ for the audits (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to this path instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless every output matches the recorded digest.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Fock,
    Gaussian,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepperArg {
    Euler,
    Kraus,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}
