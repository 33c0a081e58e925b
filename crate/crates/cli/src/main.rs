//! `conloss`: conservative annual-loss sampling from the command line.
//!
//! Exit status is 0 on success, 2 for invalid input or options and 3 for a
//! numeric failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use conloss_core::portfolio::toy::ToyTag;
use conloss_core::sampler::Tail;
use conloss_core::{BoundFamily, Error, SamplingPath, Scenario};

#[derive(Debug, Parser)]
#[command(
    name = "conloss",
    version,
    about = "Conservative sampling of annual catastrophe losses"
)]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "CONLOSS_THREADS")]
    pub threads: Option<usize>,

    /// `key = value` file of defaults for the subcommand's options.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Per-year descriptive statistics and bound summaries.
    Summarize(SummarizeArgs),
    /// Tail-bound curves for one year.
    BoundsCurve(BoundsCurveArgs),
    /// Simulate yearly totals and report return levels.
    Run(RunArgs),
    /// Return levels from saved replicate matrices.
    ReturnLevels(ReturnLevelsArgs),
    /// Return-level sensitivity to perturbed damage ratios.
    Sensitivity(SensitivityArgs),
    /// Time the standard and conservative samplers.
    Bench(BenchArgs),
    /// Write a toy single-year portfolio.
    ToyGen(ToyGenArgs),
    /// Write a synthetic multi-year portfolio.
    SynthGen(SynthGenArgs),
    /// Scale a portfolio up by resampling its risks.
    Bootstrap(BootstrapArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, value_name = "CSV")]
    pub portfolio: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub events: PathBuf,
    /// Number of simulated years; years without events have zero loss.
    #[arg(long)]
    pub n_years: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundsCurveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub year: u32,
    #[arg(long, default_value = "upper")]
    pub tail: Tail,
    #[arg(long, default_value = "hoeffding,bennett,b1,b2,b3,bernstein,clt,b-lb")]
    pub families: List<BoundFamily>,
    /// Largest per-summand excess; defaults to eight standard deviations of the mean, capped at c*.
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub t_points: usize,
    /// Standard-method replicates for the empirical 90% band; 0 for none.
    #[arg(long, default_value_t = 0)]
    pub mc_replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunMethod {
    Standard,
    Direct,
    Sir,
}

impl FromStr for RunMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "sir")]
    pub method: RunMethod,
    #[arg(long, default_value = "b2")]
    pub family: BoundFamily,
    /// Replicates.
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long)]
    pub seed: u64,
    /// Return periods; defaults to those of 2, 5, 10, 20, 50, 100, 200, 500 that fit the years.
    #[arg(long)]
    pub ks: Option<List<u32>>,
    #[arg(long, value_enum, default_value = "csv")]
    pub matrix_format: MatrixFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReturnLevelsArgs {
    /// Lower conservative matrix (CSV or binary).
    #[arg(long)]
    pub lower: PathBuf,
    #[arg(long)]
    pub upper: PathBuf,
    /// Standard-method matrix for interval width ratios.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub ks: Option<List<u32>>,
    /// Bootstrap resamples for the width-ratio standard error.
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Required with `--baseline`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "P0,P1,P2,P3,P4")]
    pub scenarios: List<Scenario>,
    /// Relative perturbation for every scenario but P0; defaults to 0.05, or 0.25 for P4.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Portfolio replicates for P3 and P4.
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Sampling replicates per portfolio replicate.
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    #[arg(long)]
    pub ks: Option<List<u32>>,
    #[arg(long, default_value = "b2")]
    pub family: BoundFamily,
    #[arg(long, default_value = "sir")]
    pub path: SamplingPath,
    #[arg(long)]
    pub seed: u64,
    /// Return period of the long-format sample file; defaults to the largest.
    #[arg(long)]
    pub samples_k: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "standard,sir")]
    pub methods: List<RunMethod>,
    #[arg(long, default_value = "100")]
    pub m: List<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value = "b2")]
    pub family: BoundFamily,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyGenArgs {
    #[arg(long)]
    pub scenario: ToyTag,
    #[arg(long, default_value_t = 100_000)]
    pub n: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_risks: u32,
    #[arg(long, default_value_t = 200)]
    pub n_years: u32,
    #[arg(long, default_value_t = 10.0)]
    pub events_per_year: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 10)]
    pub factor: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A comma-separated list option.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim())
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<T>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// The `clap` command with later flags overriding earlier ones, so that the
/// command line wins over a config file.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn run(args: Vec<OsString>) -> anyhow::Result<()> {
    let cmd = command();
    let args = config::expand_args(&cmd, args)?;
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = Cli::from_arg_matches(&matches)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Cmd::Replay(r) = &cli.command {
        let replayed = config::replay_args(&cmd, &r.manifest, &r.out)?;
        let matches = cmd.clone().try_get_matches_from(replayed)?;
        let cli = Cli::from_arg_matches(&matches)?;
        return commands::dispatch(&cmd, &cli.command, &matches);
    }
    commands::dispatch(&cmd, &cli.command, &matches)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
