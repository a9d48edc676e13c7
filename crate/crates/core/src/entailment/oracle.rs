//! Oracle implementations: seeded mock, replay cache, and a recording
//! wrapper that persists responses for later replay.

use super::prompt::{cache_key, stable_hash64};
use super::{DeciderState, OracleError};
use crate::records::ReplayRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// A prefix-coverage decider. Implementations return the raw response body;
/// callers parse the count out of it.
pub trait EntailmentOracle: Send + Sync {
    fn decide(&self, state: &DeciderState) -> Result<String, OracleError>;
}

/// What a mock oracle sees for one query, reconstructed from the state.
#[derive(Debug, Clone)]
pub struct MockContext<'a> {
    pub problem: &'a str,
    /// Reasoning prefix length k (processed blocks plus the current one).
    pub reasoning_prefix: usize,
    /// Answer blocks already covered.
    pub covered: usize,
    /// Answer blocks still pending.
    pub remaining: usize,
    /// Total answer blocks.
    pub answer_blocks: usize,
}

pub type TruthFn = dyn Fn(&MockContext<'_>) -> usize + Send + Sync;

/// Deterministic stand-in for the remote decider, driven by a ground-truth
/// boundary function plus an optional noise model. The response goes through
/// the same JSON parsing path as a real model reply.
pub struct MockOracle {
    delimiter: String,
    truth: Arc<TruthFn>,
    noise: Option<NoiseModel>,
}

impl MockOracle {
    pub fn new(delimiter: impl Into<String>, truth: Arc<TruthFn>) -> Self {
        MockOracle { delimiter: delimiter.into(), truth, noise: None }
    }

    /// Ground truth as a function of the reasoning prefix length and the
    /// answer block count.
    pub fn from_boundary_fn(
        delimiter: impl Into<String>,
        f: impl Fn(usize, usize) -> usize + Send + Sync + 'static,
    ) -> Self {
        MockOracle::new(delimiter, Arc::new(move |ctx: &MockContext<'_>| {
            f(ctx.reasoning_prefix, ctx.answer_blocks)
        }))
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = Some(noise);
        self
    }
}

impl EntailmentOracle for MockOracle {
    fn decide(&self, state: &DeciderState) -> Result<String, OracleError> {
        let k = count_blocks(&state.processed_thoughts, &self.delimiter) + 1;
        let covered = count_blocks(&state.covered_responses, &self.delimiter);
        let m = state.remaining_blocks.len();
        let ctx = MockContext {
            problem: &state.problem,
            reasoning_prefix: k,
            covered,
            remaining: m,
            answer_blocks: covered + m,
        };
        let boundary = (self.truth)(&ctx).min(ctx.answer_blocks);
        let mut num = boundary.saturating_sub(covered).min(m);
        if let Some(noise) = &self.noise {
            num = noise.perturb(state, num, m);
        }
        Ok(format!("{{\"num_blocks\": {num}}}"))
    }
}

fn count_blocks(joined: &str, delimiter: &str) -> usize {
    if joined.is_empty() {
        0
    } else {
        joined.split(delimiter).filter(|b| !b.is_empty()).count()
    }
}

/// Seeded under/over-count noise. The perturbation is a pure function of the
/// query state, so outcomes do not depend on scheduling or completion order.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub perturb_prob: f64,
    pub max_delta: usize,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(perturb_prob: f64, max_delta: usize, seed: u64) -> Self {
        NoiseModel { perturb_prob, max_delta, seed }
    }

    fn perturb(&self, state: &DeciderState, num: usize, m: usize) -> usize {
        if m == 0 {
            return 0;
        }
        let seed = stable_hash64(&[
            &self.seed.to_string(),
            &state.problem,
            &state.processed_thoughts,
            &state.current_thought,
            &state.covered_responses,
            &state.remaining_blocks.len().to_string(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !rng.random_bool(self.perturb_prob.clamp(0.0, 1.0)) {
            return num;
        }
        let delta = rng.random_range(1..=self.max_delta.max(1)) as i64;
        let sign = if rng.random_bool(0.5) { 1 } else { -1 };
        (num as i64 + sign * delta).clamp(0, m as i64) as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayCacheError {
    #[error("replay cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupted replay cache record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Serves recorded responses by cache key; missing keys are hard errors so
/// replayed runs cannot silently diverge from the recording.
pub struct ReplayOracle {
    map: HashMap<String, String>,
}

impl ReplayOracle {
    pub fn new(map: HashMap<String, String>) -> Self {
        ReplayOracle { map }
    }

    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        ReplayOracle {
            map: records.into_iter().map(|r| (r.key, r.response)).collect(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ReplayCacheError> {
        Ok(ReplayOracle { map: load_replay_cache(path)? })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Loads a replay cache file into a key/response map, attributing parse
/// failures to their line number.
pub fn load_replay_cache(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, String>, ReplayCacheError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut map = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReplayRecord = serde_json::from_str(&line)
            .map_err(|e| ReplayCacheError::Corrupt { line: idx + 1, message: e.to_string() })?;
        map.insert(record.key, record.response);
    }
    Ok(map)
}

impl EntailmentOracle for ReplayOracle {
    fn decide(&self, state: &DeciderState) -> Result<String, OracleError> {
        let key = cache_key(state);
        self.map
            .get(&key)
            .cloned()
            .ok_or(OracleError::CacheMiss { key })
    }
}

/// Wraps another oracle, persisting every (key, response) pair and serving
/// repeats from memory. First insertion wins for a given key.
pub struct RecordingOracle<O: EntailmentOracle, W: Write + Send> {
    inner: O,
    state: Mutex<RecorderState<W>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

struct RecorderState<W> {
    seen: HashMap<String, String>,
    writer: W,
}

impl<O: EntailmentOracle, W: Write + Send> RecordingOracle<O, W> {
    pub fn new(inner: O, writer: W) -> Self {
        Self::with_preload(inner, writer, HashMap::new())
    }

    /// Seeds the in-memory cache, e.g. from an existing cache file, so
    /// already-recorded queries are not re-issued.
    pub fn with_preload(inner: O, writer: W, preload: HashMap<String, String>) -> Self {
        RecordingOracle {
            inner,
            state: Mutex::new(RecorderState { seen: preload, writer }),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// (cache hits, misses) observed so far.
    pub fn hit_counts(&self) -> (usize, usize) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

impl<O: EntailmentOracle, W: Write + Send> EntailmentOracle for RecordingOracle<O, W> {
    fn decide(&self, state: &DeciderState) -> Result<String, OracleError> {
        let key = cache_key(state);
        {
            let guard = self.state.lock().expect("recorder poisoned");
            if let Some(response) = guard.seen.get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(response.clone());
            }
        }
        let response = self.inner.decide(state)?;
        let mut guard = self.state.lock().expect("recorder poisoned");
        if let Some(existing) = guard.seen.get(&key) {
            // Raced with another miss on the same key; keep the first.
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(existing.clone());
        }
        guard.seen.insert(key.clone(), response.clone());
        let record = ReplayRecord { key, response: response.clone() };
        let line = serde_json::to_string(&record)
            .map_err(|e| OracleError::RecordingFailed(e.to_string()))?;
        writeln!(guard.writer, "{line}")
            .and_then(|_| guard.writer.flush())
            .map_err(|e| OracleError::RecordingFailed(e.to_string()))?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        Ok(response)
    }
}
