//! Batch CLI for interleaved think/speak corpora.
//!
//! Subcommands:
//! - `build`: align triples against an entailment oracle and emit
//!   interleaved samples.
//! - `metrics`: per-record content-latency reports plus an aggregate line.
//! - `reward`: group outcome rewards, optional shaping, advantages.
//! - `replay-record`: run `build` against the remote oracle while
//!   persisting every response to a replay cache.
//!
//! Exit codes: 0 success, 1 hard failure, 2 configuration error.

mod build_cmd;
mod config;
mod metrics_cmd;
mod reward_cmd;
mod stream;

use build_cmd::{cmd_build, cmd_replay_record, AlignMode, BuildSettings};
use clap::{Args, Parser, Subcommand};
use config::{resolve, unescape, CliError, FileCfg};
use metrics_cmd::{cmd_metrics, MetricsSettings};
use pacekit_core::entailment::OracleKind;
use pacekit_core::interleave::DEFAULT_DELIMITER;
use pacekit_core::reward::IncorrectPenaltyMode;
use pacekit_core::tagged::TokenizerId;
use reward_cmd::{cmd_reward, RewardSettings};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pacekit", version, about = "Interleaved think/speak corpus toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct interleaved samples from (prompt, reasoning, answer) triples
    Build(BuildArgs),
    /// Compute content-latency metrics over samples, tagged text, or tokens
    Metrics(MetricsArgs),
    /// Compute group rewards, optional shaping, and advantages
    Reward(RewardArgs),
    /// Run alignment against the remote oracle, recording every response
    ReplayRecord(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Input triples, one JSON record per line
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output samples (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Alignment mode: sequential or parallel
    #[arg(long)]
    mode: Option<String>,
    /// Oracle backend: remote, mock, or replay
    #[arg(long)]
    oracle: Option<String>,
    /// Chat-completions endpoint for the remote oracle
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the remote oracle
    #[arg(long)]
    model: Option<String>,
    /// Maximum in-flight oracle queries
    #[arg(long)]
    concurrency: Option<usize>,
    /// Block delimiter (supports \n, \t, \\ escapes)
    #[arg(long)]
    delimiter: Option<String>,
    /// Seed for the mock oracle
    #[arg(long)]
    seed: Option<u64>,
    /// Replay cache file (replay oracle and replay-record)
    #[arg(long)]
    replay_cache: Option<PathBuf>,
    /// Flat key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Input records, one per line
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output reports (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Token-counting scheme: whitespace or char
    #[arg(long)]
    tokenizer: Option<String>,
    /// Latency weight used when records carry a `gold` field
    #[arg(long)]
    lambda: Option<f64>,
    /// Flat key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RewardArgs {
    /// Input groups, one JSON record per line
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output records (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Apply correctness-preserving reward shaping before advantages
    #[arg(long)]
    shape: bool,
    /// Margin separating correct from incorrect rewards
    #[arg(long)]
    epsilon: Option<f64>,
    /// Penalty magnitude for incorrect rollouts in constant mode
    #[arg(long)]
    s_min: Option<f64>,
    /// Incorrect-sample scoring: constant-smin or batch-max-length
    #[arg(long)]
    penalty_mode: Option<String>,
    /// Token-counting scheme: whitespace or char
    #[arg(long)]
    tokenizer: Option<String>,
    /// Block delimiter (supports \n, \t, \\ escapes)
    #[arg(long)]
    delimiter: Option<String>,
    /// Flat key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

fn required_input(flag: Option<PathBuf>, file: &FileCfg) -> Result<PathBuf, CliError> {
    let path = flag
        .or_else(|| file.path("input"))
        .ok_or_else(|| CliError::Config("--input is required".to_string()))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("input {} is not a readable file", path.display())));
    }
    Ok(path)
}

fn parse_flag<T: std::str::FromStr>(value: Option<String>, what: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .map(|raw| {
            raw.parse::<T>()
                .map_err(|e| CliError::Config(format!("invalid --{what} `{raw}`: {e}")))
        })
        .transpose()
}

impl std::str::FromStr for OracleKindArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(OracleKindArg(OracleKind::Remote)),
            "mock" => Ok(OracleKindArg(OracleKind::Mock)),
            "replay" => Ok(OracleKindArg(OracleKind::Replay)),
            other => {
                Err(format!("unknown oracle `{other}` (expected remote, mock, or replay)"))
            }
        }
    }
}

/// Newtype so the core enum picks up CLI spellings via `FromStr`.
struct OracleKindArg(OracleKind);

fn build_settings(args: BuildArgs) -> Result<BuildSettings, CliError> {
    let file = FileCfg::load(args.config.as_deref())?;
    let mode = resolve(
        parse_flag::<AlignMode>(args.mode, "mode")?,
        file.parse::<AlignMode>("mode")?,
        AlignMode::Sequential,
    );
    let oracle = resolve(
        parse_flag::<OracleKindArg>(args.oracle, "oracle")?.map(|o| o.0),
        file.parse::<OracleKindArg>("oracle")?.map(|o| o.0),
        OracleKind::Mock,
    );
    let delimiter = unescape(&resolve(
        args.delimiter,
        file.get("delimiter").map(str::to_string),
        DEFAULT_DELIMITER.to_string(),
    ));
    if delimiter.is_empty() {
        return Err(CliError::Config("delimiter must be non-empty".to_string()));
    }
    Ok(BuildSettings {
        input: required_input(args.input, &file)?,
        output: args.output.or_else(|| file.path("output")),
        mode,
        oracle,
        endpoint: args.endpoint.or_else(|| file.get("endpoint").map(str::to_string)),
        model: args.model.or_else(|| file.get("model").map(str::to_string)),
        concurrency: resolve(args.concurrency, file.parse("concurrency")?, 8),
        delimiter,
        seed: resolve(args.seed, file.parse("seed")?, 0),
        replay_cache: args.replay_cache.or_else(|| file.path("replay-cache")),
    })
}

fn metrics_settings(args: MetricsArgs) -> Result<MetricsSettings, CliError> {
    let file = FileCfg::load(args.config.as_deref())?;
    Ok(MetricsSettings {
        input: required_input(args.input, &file)?,
        output: args.output.or_else(|| file.path("output")),
        tokenizer: resolve(
            parse_flag::<TokenizerId>(args.tokenizer, "tokenizer")?,
            file.parse::<TokenizerId>("tokenizer")?,
            TokenizerId::Whitespace,
        ),
        lambda: resolve(args.lambda, file.parse("lambda")?, 0.1),
    })
}

fn reward_settings(args: RewardArgs) -> Result<RewardSettings, CliError> {
    let file = FileCfg::load(args.config.as_deref())?;
    let delimiter = unescape(&resolve(
        args.delimiter,
        file.get("delimiter").map(str::to_string),
        DEFAULT_DELIMITER.to_string(),
    ));
    if delimiter.is_empty() {
        return Err(CliError::Config("delimiter must be non-empty".to_string()));
    }
    Ok(RewardSettings {
        input: required_input(args.input, &file)?,
        output: args.output.or_else(|| file.path("output")),
        shape: args.shape || file.parse("shape")?.unwrap_or(false),
        epsilon: resolve(args.epsilon, file.parse("epsilon")?, 0.5),
        s_min: resolve(args.s_min, file.parse("s-min")?, 3.0),
        penalty_mode: resolve(
            parse_flag::<IncorrectPenaltyMode>(args.penalty_mode, "penalty-mode")?,
            file.parse::<IncorrectPenaltyMode>("penalty-mode")?,
            IncorrectPenaltyMode::BatchMaxLength,
        ),
        tokenizer: resolve(
            parse_flag::<TokenizerId>(args.tokenizer, "tokenizer")?,
            file.parse::<TokenizerId>("tokenizer")?,
            TokenizerId::Whitespace,
        ),
        delimiter,
    })
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Build(args) => cmd_build(&build_settings(args)?),
        Command::Metrics(args) => cmd_metrics(&metrics_settings(args)?),
        Command::Reward(args) => cmd_reward(&reward_settings(args)?),
        Command::ReplayRecord(args) => cmd_replay_record(&build_settings(args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("pacekit: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
