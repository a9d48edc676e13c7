//! `build` and `replay-record`: triples in, interleaved samples out.

use crate::config::CliError;
use crate::stream::{
    numbered_lines, open_input, write_failure_manifest, Failure, Output, CHUNK_SIZE,
};
use pacekit_core::batch;
use pacekit_core::entailment::{
    align_parallel, align_sequential, load_replay_cache, stable_hash64, EntailmentOracle,
    MockContext, MockOracle, OracleConfig, OracleKind, RecordingOracle, RemoteOracle,
    ReplayCacheError, ReplayOracle,
};
use pacekit_core::interleave::{build_from_pair, OracleMode, SegmentedPair};
use pacekit_core::records::{parse_line, SampleRecord, TripleRecord};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    Sequential,
    Parallel,
}

impl std::str::FromStr for AlignMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(AlignMode::Sequential),
            "parallel" => Ok(AlignMode::Parallel),
            other => Err(format!("unknown mode `{other}` (expected `sequential` or `parallel`)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildSettings {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub mode: AlignMode,
    pub oracle: OracleKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub concurrency: usize,
    pub delimiter: String,
    pub seed: u64,
    pub replay_cache: Option<PathBuf>,
}

impl BuildSettings {
    fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            mode: self.oracle,
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            concurrency_limit: self.concurrency,
            ..OracleConfig::default()
        }
    }
}

/// Deterministic stand-in oracle: each problem gets a seeded unlock rate, so
/// reruns with the same seed produce byte-identical corpora.
fn seeded_mock(delimiter: &str, seed: u64) -> MockOracle {
    let salt = seed.to_string();
    MockOracle::new(
        delimiter.to_string(),
        Arc::new(move |ctx: &MockContext<'_>| {
            let h = stable_hash64(&[&salt, ctx.problem]);
            let step = 1 + (h % 3) as usize;
            ((ctx.reasoning_prefix - 1) * step / 2).min(ctx.answer_blocks)
        }),
    )
}

fn replay_error(err: ReplayCacheError) -> CliError {
    match err {
        ReplayCacheError::Io(e) => CliError::Config(format!("replay cache: {e}")),
        corrupt @ ReplayCacheError::Corrupt { .. } => CliError::Hard(corrupt.to_string()),
    }
}

pub fn cmd_build(settings: &BuildSettings) -> Result<u8, CliError> {
    let cfg = settings.oracle_config();
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    match settings.oracle {
        OracleKind::Mock => {
            let oracle = seeded_mock(&settings.delimiter, settings.seed);
            run_build(settings, &cfg, &oracle)
        }
        OracleKind::Replay => {
            let path = settings.replay_cache.as_deref().ok_or_else(|| {
                CliError::Config("replay oracle requires --replay-cache".to_string())
            })?;
            let oracle = ReplayOracle::from_file(path).map_err(replay_error)?;
            run_build(settings, &cfg, &oracle)
        }
        OracleKind::Remote => {
            let oracle = RemoteOracle::new(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            run_build(settings, &cfg, &oracle)
        }
    }
}

pub fn cmd_replay_record(settings: &BuildSettings) -> Result<u8, CliError> {
    let cfg = OracleConfig { mode: OracleKind::Remote, ..settings.oracle_config() };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let cache_path = settings.replay_cache.as_deref().ok_or_else(|| {
        CliError::Config("replay-record requires --replay-cache".to_string())
    })?;
    let preload = if cache_path.exists() {
        load_replay_cache(cache_path).map_err(replay_error)?
    } else {
        Default::default()
    };
    let writer = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(cache_path)
        .map_err(|e| CliError::Config(format!("cannot open replay cache for append: {e}")))?;
    let remote = RemoteOracle::new(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let recorder = RecordingOracle::with_preload(remote, writer, preload);
    let status = run_build(settings, &cfg, &recorder)?;
    let (hits, misses) = recorder.hit_counts();
    let total = hits + misses;
    let rate = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    eprintln!("replay-record: {total} oracle call(s), cache hit rate {rate:.3}");
    Ok(status)
}

struct BuildStats {
    built: usize,
    cancelled: usize,
}

fn run_build(
    settings: &BuildSettings,
    cfg: &OracleConfig,
    oracle: &dyn EntailmentOracle,
) -> Result<u8, CliError> {
    let reader = open_input(&settings.input)?;
    let mut output = Output::create(settings.output.as_deref())?;
    let mut failures: Vec<Failure> = Vec::new();
    let mut stats = BuildStats { built: 0, cancelled: 0 };

    let mut chunk: Vec<(usize, TripleRecord)> = Vec::with_capacity(CHUNK_SIZE);
    for entry in numbered_lines(reader) {
        let (line_no, line) = entry?;
        match parse_line::<TripleRecord>(&line, line_no) {
            Ok(triple) => chunk.push((line_no, triple)),
            Err(e) => failures.push(Failure { line: line_no, id: None, error: e.to_string() }),
        }
        if chunk.len() >= CHUNK_SIZE {
            process_chunk(settings, cfg, oracle, &mut chunk, &mut output, &mut failures, &mut stats)?;
        }
    }
    process_chunk(settings, cfg, oracle, &mut chunk, &mut output, &mut failures, &mut stats)?;
    output.flush()?;

    let rate = if stats.built == 0 {
        0.0
    } else {
        stats.cancelled as f64 / stats.built as f64
    };
    eprintln!(
        "build: {} sample(s) written, {} failure(s), cancellation rate {rate:.3}",
        stats.built,
        failures.len(),
    );
    if let Some(path) = write_failure_manifest(&output, &failures)? {
        eprintln!("build: failure manifest at {}", path.display());
    }
    for failure in &failures {
        eprintln!("build: line {}: {}", failure.line, failure.error);
    }
    Ok(u8::from(!failures.is_empty()))
}

fn process_chunk(
    settings: &BuildSettings,
    cfg: &OracleConfig,
    oracle: &dyn EntailmentOracle,
    chunk: &mut Vec<(usize, TripleRecord)>,
    output: &mut Output,
    failures: &mut Vec<Failure>,
    stats: &mut BuildStats,
) -> Result<(), CliError> {
    if chunk.is_empty() {
        return Ok(());
    }
    let results = batch::map(chunk, |(line_no, triple)| {
        (*line_no, triple.id.clone(), build_one(settings, cfg, oracle, triple))
    });
    for (line_no, id, result) in results {
        match result {
            Ok(record) => {
                stats.built += 1;
                if record.cancelled_from.is_some() {
                    stats.cancelled += 1;
                }
                output.write_json(&record)?;
            }
            Err(message) => {
                failures.push(Failure { line: line_no, id: Some(id), error: message })
            }
        }
    }
    output.flush()?;
    chunk.clear();
    Ok(())
}

fn build_one(
    settings: &BuildSettings,
    cfg: &OracleConfig,
    oracle: &dyn EntailmentOracle,
    triple: &TripleRecord,
) -> Result<SampleRecord, String> {
    let pair = SegmentedPair::segment(&triple.reasoning, &triple.answer, &settings.delimiter)
        .map_err(|e| e.to_string())?;
    let (bounds, cancelled_from, mode) = match settings.mode {
        AlignMode::Sequential => {
            let bounds =
                align_sequential(&pair, &triple.prompt, oracle, cfg, &settings.delimiter)
                    .map_err(|e| e.to_string())?;
            (bounds, None, OracleMode::Sequential)
        }
        AlignMode::Parallel => {
            let outcome =
                align_parallel(&pair, &triple.prompt, oracle, cfg, &settings.delimiter)
                    .map_err(|e| e.to_string())?;
            (outcome.boundaries, outcome.cancelled_from, OracleMode::Parallel)
        }
    };
    let sample = build_from_pair(
        &triple.id,
        &pair,
        &bounds,
        &settings.delimiter,
        mode,
        cancelled_from,
    )
    .map_err(|e| e.to_string())?;
    Ok(SampleRecord::from(&sample))
}
