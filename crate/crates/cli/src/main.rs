//! `pmiris`: scriptable front end for segmentation, encoding, matching,
//! batch evaluation, statistics and the gallery.
//!
//! Results go to stdout as JSON (or to CSV files), logs to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmiris_core::{EncoderId, SourceChannel};
use tracing_subscriber::EnvFilter;

use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(name = "pmiris", version, about = "Post-mortem iris recognition workbench")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed for randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Image channel: `nir` or `rgb_red`.
    #[arg(long, global = true, default_value = "nir")]
    channel: SourceChannel,
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find pupil and iris boundaries.
    Segment(commands::SegmentArgs),
    /// Unwrap the iris to the polar grid.
    Normalize(commands::NormalizeArgs),
    /// Extract an iris code.
    Encode(commands::EncodeArgs),
    /// Compare two images (or two `.pmit` templates).
    Match(commands::MatchArgs),
    /// Image quality metrics.
    Quality(commands::QualityArgs),
    /// Enumerate genuine and impostor pairs of a metadata CSV.
    Pairs(commands::PairsArgs),
    /// All-pairs evaluation of a dataset.
    RunEval(commands::RunEvalArgs),
    /// Equalize mean PMI across demographic groups.
    Balance(commands::BalanceArgs),
    /// Bootstrap d' per group and test for group differences.
    Stats(commands::StatsArgs),
    /// Presentation attack detection error rates.
    PadEval(commands::PadEvalArgs),
    /// Add templates to a gallery.
    Enroll(commands::EnrollArgs),
    /// Top-k search of a gallery.
    Identify(commands::IdentifyArgs),
    /// Run the HTTP service.
    Serve(commands::ServeArgs),
    /// Render a synthetic dataset.
    Synth(commands::SynthArgs),
}

/// Bad flags, arguments or configuration.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

/// Failures that are not the input's fault.
#[derive(Debug)]
pub struct InternalError(pub anyhow::Error);

impl fmt::Display for InternalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InternalError {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    UsageError(e.into()).into()
}

pub fn internal(e: impl Into<anyhow::Error>) -> anyhow::Error {
    InternalError(e.into()).into()
}

/// Comma-separated encoder names, or `all`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderList(pub Vec<EncoderId>);

impl std::str::FromStr for EncoderList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(EncoderList(EncoderId::ALL.to_vec()));
        }
        let mut out = Vec::new();
        for part in s.split(',') {
            let e: EncoderId = part.parse()?;
            if !out.contains(&e) {
                out.push(e);
            }
        }
        Ok(EncoderList(out))
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        1
    } else if e.downcast_ref::<InternalError>().is_some() {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut settings = Settings::load(cli.global.config.as_deref(), &cli.global.set).map_err(usage)?;
    if cli.global.seed.is_some() {
        settings.seed = cli.global.seed;
    }
    if cli.global.jobs.is_some() {
        settings.jobs = cli.global.jobs;
    }
    if let Some(n) = settings.jobs {
        if n == 0 {
            return Err(usage(anyhow::anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(internal)?;
    }
    let ctx = commands::Context {
        settings,
        channel: cli.global.channel,
    };
    match cli.command {
        Command::Segment(a) => commands::segment(&ctx, a),
        Command::Normalize(a) => commands::normalize(&ctx, a),
        Command::Encode(a) => commands::encode(&ctx, a),
        Command::Match(a) => commands::match_cmd(&ctx, a),
        Command::Quality(a) => commands::quality(&ctx, a),
        Command::Pairs(a) => commands::pairs(&ctx, a),
        Command::RunEval(a) => commands::run_eval(&ctx, a),
        Command::Balance(a) => commands::balance(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::PadEval(a) => commands::pad_eval(&ctx, a),
        Command::Enroll(a) => commands::enroll(&ctx, a),
        Command::Identify(a) => commands::identify(&ctx, a),
        Command::Serve(a) => commands::serve(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .init();

    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
