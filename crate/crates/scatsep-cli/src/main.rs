//! Batch command-line front end: separation runs, synthetic data
//! generation, the recovery-vs-snippet-count experiment, covariance
//! dashboards, and the classical deglitcher. Every run writes its outputs
//! (and one reproducibility manifest) into the directory given by
//! `--output` and nowhere else.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver abort.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "scatsep",
    about = "Unsupervised time-series source separation in scattering covariance space",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate an unknown source from an observation using reference
    /// snippets of the background process.
    Separate(SeparateArgs),
    /// Generate synthetic waveforms (multifractal noise, transient
    /// trains, or full mixtures with ground truth).
    Synth(SynthArgs),
    /// Sweep the number of reference snippets and report recovery SNR.
    SnrExperiment(SnrArgs),
    /// Compute normalized scattering covariance dashboards for one or
    /// more waveforms and render a comparison figure.
    Dashboard(DashboardArgs),
    /// Run the classical derivative-threshold deglitcher.
    DeglitchBaseline(BaselineArgs),
}

#[derive(Args)]
pub struct SeparateArgs {
    /// Observation waveform file (text or raw f32).
    #[arg(long)]
    pub observation: PathBuf,
    /// Snippet catalog manifest (JSON array of windows).
    #[arg(long)]
    pub snippets: PathBuf,
    /// L-BFGS iteration budget; overrides the preset.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    /// Mixing coefficient of the unknown source.
    #[arg(long, default_value_t = 1.0)]
    pub a1: f64,
    /// Experiment preset bundling window length and iteration budget:
    /// stylized (2048/500), deglitch (2048/1000), quake (4096/200).
    #[arg(long)]
    pub preset: Option<String>,
    /// Octave count of the filter bank.
    #[arg(long, default_value_t = 8)]
    pub j: usize,
    /// Filters per octave.
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Wavelet family: battle_lemarie or morlet_renormalized.
    #[arg(long, default_value = "battle_lemarie")]
    pub family: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator: mrw, glitch, or mixture.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 2048)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of realizations to generate (mrw only).
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Also write a snippet catalog manifest covering the generated
    /// realizations (mrw only).
    #[arg(long, default_value_t = false)]
    pub emit_catalog: bool,
    /// Output waveform format: text or raw.
    #[arg(long, default_value = "text")]
    pub format: String,
    #[arg(long, default_value_t = 0.04)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 512)]
    pub corr_scale: usize,
    #[arg(long, default_value_t = 8)]
    pub n_peaks: usize,
    #[arg(long, default_value_t = 3.0)]
    pub amp_min: f64,
    #[arg(long, default_value_t = 8.0)]
    pub amp_max: f64,
    #[arg(long, default_value_t = 4.0)]
    pub left_decay: f64,
    #[arg(long, default_value_t = 32.0)]
    pub right_decay: f64,
    #[arg(long, default_value_t = 128)]
    pub min_separation: usize,
    /// Mixing coefficient (mixture only).
    #[arg(long, default_value_t = 1.0)]
    pub a1: f64,
}

#[derive(Args)]
pub struct SnrArgs {
    /// Comma-separated snippet counts, e.g. 4,16,64,100.
    #[arg(long)]
    pub k_values: String,
    #[arg(long)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// Iteration budget per trial (defaults to the stylized preset).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Window length of the stylized data.
    #[arg(long, default_value_t = 2048)]
    pub length: usize,
    #[arg(long, default_value_t = 8)]
    pub j: usize,
}

#[derive(Args)]
pub struct DashboardArgs {
    /// Input waveform files; multiple inputs overlay in the figure.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub j: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    #[arg(long, default_value = "battle_lemarie")]
    pub family: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub decimate: usize,
    /// Band-pass corners in cycles per decimated sample.
    #[arg(long, default_value_t = 0.002)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    pub band_hi: f64,
    /// Detection threshold in robust sigmas of the derivative.
    #[arg(long, default_value_t = 6.0)]
    pub threshold: f64,
    /// Refractory window in decimated samples.
    #[arg(long, default_value_t = 96)]
    pub refractory: usize,
    /// Fit window half-width in original samples.
    #[arg(long, default_value_t = 256)]
    pub fit_window: usize,
}

/// Errors carrying their process exit code.
pub enum CliError {
    /// Bad configuration, unreadable inputs, invalid formats: exit 2.
    Config(String),
    /// The solver could not produce a result: exit 3.
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<scatsep::Error> for CliError {
    fn from(e: scatsep::Error) -> Self {
        match &e {
            scatsep::Error::SolverAbort(_) | scatsep::Error::NonFinite { .. } => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub fn verbose() -> bool {
    std::env::var("SCATSEP_LOG")
        .map(|v| v == "debug" || v == "info")
        .unwrap_or(false)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Separate(args) => commands::cmd_separate(&args),
        Command::Synth(args) => commands::cmd_synth(&args),
        Command::SnrExperiment(args) => commands::cmd_snr_experiment(&args),
        Command::Dashboard(args) => commands::cmd_dashboard(&args),
        Command::DeglitchBaseline(args) => commands::cmd_deglitch_baseline(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scatsep: error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
