//! Prefix-entailment alignment: given segmented reasoning and answer
//! blocks, find for each reasoning prefix the largest answer prefix it
//! supports.
//!
//! The oracle answers one coverage question at a time; this module
//! orchestrates it either sequentially (incremental counts against the
//! still-uncovered blocks) or in parallel (absolute counts against the full
//! answer set, repaired into a monotone boundary vector afterwards). Both
//! paths force the terminal boundary to the full answer so an imperfect
//! checker can never truncate the emitted answer.

mod oracle;
mod prompt;
mod remote;

pub use oracle::{
    load_replay_cache, EntailmentOracle, MockContext, MockOracle, NoiseModel, RecordingOracle,
    ReplayCacheError, ReplayOracle, TruthFn,
};
pub use prompt::{cache_key, parse_decider_response, render_decider_prompt, stable_hash64, TEMPLATE_VERSION};
pub use remote::RemoteOracle;

use crate::interleave::{BoundaryVector, SegmentedPair};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("remote oracle unavailable after {attempts} attempt(s): {message}")]
    RemoteUnavailable { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("request timed out after {attempts} attempt(s): {message}")]
    Timeout { attempts: u32, message: String },
    #[error("no parseable decision in response: {snippet}")]
    Unparseable { snippet: String },
    #[error("replay cache has no response for key {key}")]
    CacheMiss { key: String },
    #[error("failed to persist recorded response: {0}")]
    RecordingFailed(String),
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
}

/// One coverage question: which pending answer blocks become supported once
/// the current thought is taken into account.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeciderState {
    pub problem: String,
    pub processed_thoughts: String,
    pub covered_responses: String,
    pub current_thought: String,
    pub remaining_blocks: Vec<String>,
}

impl DeciderState {
    /// State for the sequential pass at reasoning prefix `k` (1-based) with
    /// `covered` answer blocks already unlocked.
    pub fn incremental(
        problem: &str,
        pair: &SegmentedPair,
        k: usize,
        covered: usize,
        delimiter: &str,
    ) -> Self {
        DeciderState {
            problem: problem.to_string(),
            processed_thoughts: pair.reasoning_blocks()[..k - 1].join(delimiter),
            covered_responses: pair.answer_blocks()[..covered].join(delimiter),
            current_thought: pair.reasoning_blocks()[k - 1].clone(),
            remaining_blocks: pair.answer_blocks()[covered..].to_vec(),
        }
    }

    /// State for a parallel absolute check at prefix `k`: full answer set,
    /// nothing covered yet.
    pub fn absolute(problem: &str, pair: &SegmentedPair, k: usize, delimiter: &str) -> Self {
        Self::incremental(problem, pair, k, 0, delimiter)
    }
}

/// How the oracle is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Remote,
    Mock,
    Replay,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub mode: OracleKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout: Duration,
    pub backoff_base: Duration,
    /// Maximum in-flight oracle queries.
    pub concurrency_limit: usize,
    /// Whether the parallel aligner skips still-pending checks once some
    /// prefix reports full coverage.
    pub cancellation_enabled: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: OracleKind::Mock,
            endpoint: None,
            model_name: None,
            api_key_env: "OPENAI_API_KEY".to_string(),
            max_retries: 3,
            timeout: Duration::from_secs(60),
            backoff_base: Duration::from_millis(250),
            concurrency_limit: 8,
            cancellation_enabled: true,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.concurrency_limit < 1 {
            return Err(OracleError::InvalidConfig(
                "concurrency limit must be at least 1".to_string(),
            ));
        }
        if self.mode == OracleKind::Remote
            && (self.endpoint.is_none() || self.model_name.is_none())
        {
            return Err(OracleError::InvalidConfig(
                "remote mode requires endpoint and model name".to_string(),
            ));
        }
        Ok(())
    }
}

/// Whether raw oracle counts are absolute prefixes of the full answer set or
/// increments over the already-covered blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountSemantics {
    Absolute,
    Incremental,
}

/// Raw per-prefix counts as returned by the oracle, one per reasoning block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCounts {
    pub counts: Vec<usize>,
    pub semantics: CountSemantics,
}

impl RawCounts {
    pub fn absolute(counts: Vec<usize>) -> Self {
        RawCounts { counts, semantics: CountSemantics::Absolute }
    }
}

/// Repairs noisy absolute counts into a valid boundary vector: running
/// maximum for monotonicity, terminal entry forced to the answer block
/// count.
pub fn monotone_repair(raw: &RawCounts, answer_blocks: usize) -> BoundaryVector {
    debug_assert_eq!(raw.semantics, CountSemantics::Absolute);
    debug_assert!(!raw.counts.is_empty());
    let mut out = Vec::with_capacity(raw.counts.len());
    let mut run = 0usize;
    for &c in &raw.counts {
        run = run.max(c.min(answer_blocks));
        out.push(run);
    }
    *out.last_mut().expect("counts are non-empty") = answer_blocks;
    BoundaryVector::new(out, answer_blocks).expect("running max with forced terminal is valid")
}

/// Queries the oracle, retrying unparseable responses; `None` means the
/// conservative fallback (treat as not addable) applies.
fn query_count(
    oracle: &dyn EntailmentOracle,
    state: &DeciderState,
    max_retries: u32,
) -> Result<Option<usize>, OracleError> {
    let m = state.remaining_blocks.len();
    for _ in 0..=max_retries {
        let body = oracle.decide(state)?;
        match parse_decider_response(&body, m) {
            Ok(count) => return Ok(Some(count)),
            Err(OracleError::Unparseable { .. }) => continue,
            Err(other) => return Err(other),
        }
    }
    Ok(None)
}

/// Walks reasoning prefixes in order, asking for incremental counts against
/// the still-uncovered answer blocks. The final prefix is never queried; it
/// unconditionally unlocks the full answer.
pub fn align_sequential(
    pair: &SegmentedPair,
    problem: &str,
    oracle: &dyn EntailmentOracle,
    cfg: &OracleConfig,
    delimiter: &str,
) -> Result<BoundaryVector, OracleError> {
    let k_r = pair.k_r();
    let k_a = pair.k_a();
    let mut bounds = Vec::with_capacity(k_r);
    let mut covered = 0usize;
    for k in 1..k_r {
        if covered < k_a {
            let state = DeciderState::incremental(problem, pair, k, covered, delimiter);
            let count = query_count(oracle, &state, cfg.max_retries)?.unwrap_or(0);
            covered += count.min(k_a - covered);
        }
        bounds.push(covered);
    }
    bounds.push(k_a);
    Ok(BoundaryVector::new(bounds, k_a).expect("sequential bounds are monotone"))
}

/// Result of a parallel alignment run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelOutcome {
    pub boundaries: BoundaryVector,
    /// Smallest prefix index (1-based) whose check reported full coverage;
    /// checks past it are redundant and get cancelled when enabled.
    pub cancelled_from: Option<usize>,
    /// Assembled absolute counts, terminal safeguard included.
    pub raw_counts: RawCounts,
}

enum TaskSlot {
    Pending,
    Done(usize),
    Skipped,
    Failed(OracleError),
}

struct ParallelShared {
    next: usize,
    slots: Vec<TaskSlot>,
    /// Smallest completed prefix (0-based task index) with full coverage.
    trigger: Option<usize>,
}

/// Runs absolute-coverage checks for every non-terminal reasoning prefix
/// with bounded concurrency.
///
/// When a completed check reports full coverage, still-pending checks with
/// larger indices are skipped and assigned full coverage; the running-max
/// repair makes the result identical to running them. Boundaries and the
/// cancellation point depend only on response values, not completion order,
/// because tasks are dispatched in index order and a started task always
/// lands its real value.
pub fn align_parallel(
    pair: &SegmentedPair,
    problem: &str,
    oracle: &dyn EntailmentOracle,
    cfg: &OracleConfig,
    delimiter: &str,
) -> Result<ParallelOutcome, OracleError> {
    cfg.validate()?;
    let k_r = pair.k_r();
    let k_a = pair.k_a();
    let tasks = k_r - 1;

    if tasks == 0 {
        let raw = RawCounts::absolute(vec![k_a]);
        return Ok(ParallelOutcome {
            boundaries: monotone_repair(&raw, k_a),
            cancelled_from: None,
            raw_counts: raw,
        });
    }

    let shared = Mutex::new(ParallelShared {
        next: 0,
        slots: (0..tasks).map(|_| TaskSlot::Pending).collect(),
        trigger: None,
    });

    let workers = cfg.concurrency_limit.min(tasks);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = {
                    let mut guard = shared.lock().expect("aligner poisoned");
                    if guard.next >= tasks {
                        return;
                    }
                    let i = guard.next;
                    guard.next += 1;
                    if cfg.cancellation_enabled
                        && guard.trigger.is_some_and(|t| i > t)
                    {
                        guard.slots[i] = TaskSlot::Skipped;
                        continue;
                    }
                    i
                };
                let state = DeciderState::absolute(problem, pair, task + 1, delimiter);
                let outcome = query_count(oracle, &state, cfg.max_retries);
                let mut guard = shared.lock().expect("aligner poisoned");
                match outcome {
                    Ok(count) => {
                        let count = count.unwrap_or(0);
                        if count >= k_a {
                            guard.trigger =
                                Some(guard.trigger.map_or(task, |t| t.min(task)));
                        }
                        guard.slots[task] = TaskSlot::Done(count.min(k_a));
                    }
                    Err(e) => guard.slots[task] = TaskSlot::Failed(e),
                }
            });
        }
    });

    let shared = shared.into_inner().expect("aligner poisoned");
    let trigger = shared.trigger;

    // A failure only matters if its value could influence the repaired
    // boundaries, i.e. it precedes any full-coverage trigger.
    let mut slots = shared.slots;
    for (i, slot) in slots.iter_mut().enumerate() {
        if matches!(slot, TaskSlot::Failed(_)) && trigger.is_none_or(|t| i < t) {
            let TaskSlot::Failed(err) = std::mem::replace(slot, TaskSlot::Skipped) else {
                unreachable!();
            };
            return Err(err);
        }
    }

    let mut counts: Vec<usize> = slots
        .into_iter()
        .map(|slot| match slot {
            TaskSlot::Done(c) => c,
            TaskSlot::Skipped | TaskSlot::Failed(_) => k_a,
            TaskSlot::Pending => unreachable!("all tasks dispatched"),
        })
        .collect();
    counts.push(k_a);
    let raw = RawCounts::absolute(counts);

    Ok(ParallelOutcome {
        boundaries: monotone_repair(&raw, k_a),
        cancelled_from: trigger.map(|t| t + 1),
        raw_counts: raw,
    })
}

/// Counting semaphore bounding in-flight oracle requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), available: Condvar::new() }
    }

    pub(crate) fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}
