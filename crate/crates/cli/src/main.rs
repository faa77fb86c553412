//! `aevb`: train variational auto-encoders and their baselines, estimate
//! marginal likelihoods, and render sample and manifold grids.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

/// Exit status for bad usage, configuration or input.
pub const EXIT_USAGE: u8 = 1;
/// Exit status when training or sampling produced non-finite values.
pub const EXIT_NUMERIC: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "aevb", version, about = "Variational auto-encoders and their baselines", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write metrics.csv plus a checkpoint.
    Train(TrainArgs),
    /// Train several algorithms with identical settings and merge their metrics.
    Compare(CompareArgs),
    /// Estimate log p(x) per datapoint from a checkpoint; CSV on stdout or --output.
    Mll(MllArgs),
    /// Render decoder means at prior draws as a PGM grid.
    Sample(SampleArgs),
    /// Render decoder means over a grid of a 2-D latent space as a PGM.
    Manifold(ManifoldArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Images as IDX (optionally gzipped) or CSV with values 0-255.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Keep only the first N rows.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Rows used for training; the remainder is the test split.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Threshold intensities to {0, 1} at this value.
    #[arg(long)]
    pub binarize: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Observation model: bernoulli or gaussian.
    #[arg(long, default_value = "bernoulli")]
    pub family: String,
    /// Squash the Gaussian decoder mean into (0, 1).
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub clamp_mean: bool,
    #[arg(long, default_value_t = 10)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub encoder_hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub decoder_hidden: usize,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 100)]
    pub minibatch_size: usize,
    /// Noise draws per datapoint in each gradient estimate.
    #[arg(long, default_value_t = 1)]
    pub samples_per_point: usize,
    /// adagrad or sgd.
    #[arg(long, default_value = "adagrad")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0.02)]
    pub stepsize: f64,
    #[arg(long, default_value_t = 1)]
    pub epochs: u64,
    /// Stop after this many training examples.
    #[arg(long)]
    pub max_examples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add the gradient of a standard-normal prior on the parameters.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub weight_decay: bool,
    /// Evaluate (and checkpoint) every N training examples.
    #[arg(long, default_value_t = 10_000)]
    pub eval_every: u64,
    /// Datapoints per split in each evaluation, or "all".
    #[arg(long, default_value = "1000")]
    pub eval_points: String,
    #[arg(long, default_value_t = 1)]
    pub eval_samples: usize,
    /// Bound estimator for AEVB: a or b.
    #[arg(long, default_value = "b")]
    pub estimator: String,
    /// Try these comma-separated stepsizes for ten evaluations and keep the best.
    #[arg(long)]
    pub select_stepsize: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct HmcArgs {
    #[arg(long, default_value_t = 10)]
    pub leapfrog_steps: usize,
    /// Initial HMC stepsize before adaptation.
    #[arg(long, default_value_t = 0.1)]
    pub hmc_stepsize: f64,
    #[arg(long, default_value_t = 0.9)]
    pub target_acceptance: f64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thinning: usize,
    /// Tune the HMC stepsize during burn-in.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub adapt: bool,
    /// Monte Carlo EM: parameter updates per sampled minibatch.
    #[arg(long, default_value_t = 5)]
    pub weight_updates: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Flat key = value file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub hmc: HmcArgs,
    /// aevb, wake_sleep or mcem.
    #[arg(long, default_value = "aevb")]
    pub algorithm: String,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for metrics.csv and checkpoint.ckpt.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub hmc: HmcArgs,
    /// Comma-separated algorithms to run.
    #[arg(long, default_value = "aevb,wake_sleep")]
    pub algorithms: String,
    /// Output directory for compare.csv and one checkpoint per algorithm.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct MllArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Estimate for the first N datapoints.
    #[arg(long, default_value_t = 1000)]
    pub num_points: usize,
    /// Posterior samples per datapoint.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub leapfrog_steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub hmc_stepsize: f64,
    #[arg(long, default_value_t = 0.9)]
    pub target_acceptance: f64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 3)]
    pub thinning: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub adapt: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    /// Image height; inferred from the data dimension when absent.
    #[arg(long)]
    pub image_height: Option<usize>,
    #[arg(long)]
    pub image_width: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub num_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long, default_value = "samples.pgm")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ManifoldArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cells per side.
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long, default_value = "manifold.pgm")]
    pub output: PathBuf,
}

impl Command {
    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Train(a) => a.config.as_ref(),
            Command::Compare(a) => a.config.as_ref(),
            Command::Mll(a) => a.config.as_ref(),
            Command::Sample(a) => a.config.as_ref(),
            Command::Manifold(a) => a.config.as_ref(),
        }
    }
}

/// Parse the command line, folding in a `--config` file when one is given.
fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&args)?;
    let Some(path) = cli.command.config_path().cloned() else {
        return Ok(cli);
    };
    let sub_name = args[1].to_string_lossy().into_owned();
    let root = Cli::command();
    let sub = root.find_subcommand(&sub_name).expect("parsed subcommand exists");
    let known: Vec<String> = sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let entries = config::load(&path, &known)
        .map_err(|e| Cli::command().error(clap::error::ErrorKind::InvalidValue, e.to_string()))?;
    let mut merged = vec![args[0].clone(), args[1].clone()];
    merged.extend(config::as_args(&entries));
    merged.extend(args[2..].iter().cloned());
    Cli::try_parse_from(merged)
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
