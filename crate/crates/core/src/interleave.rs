//! Construction of interleaved think/speak samples from
//! (prompt, reasoning, answer) triples and an alignment boundary vector.
//!
//! Reasoning and answers are normalized, split into delimiter-separated
//! blocks, and re-woven so that each answer increment is emitted as soon as
//! its boundary unlocks it. Reasoning blocks that unlock nothing are merged
//! into the open think segment; reasoning left over after the full answer is
//! unlocked becomes a single trailing think segment.

use crate::tagged::Segment;
use serde::{Deserialize, Serialize};

/// Block delimiter used throughout when none is configured.
pub const DEFAULT_DELIMITER: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("no blocks remain after splitting")]
    EmptyAfterSplit,
    #[error("block delimiter must be non-empty")]
    EmptyDelimiter,
    #[error("invalid unlock range: prev {prev}, next {next}, blocks {blocks}")]
    RangeError { prev: usize, next: usize, blocks: usize },
    #[error("boundary invariant violated: {0}")]
    InvariantViolation(String),
}

/// One (prompt, reasoning, answer) training triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub id: String,
    pub prompt: String,
    pub reasoning: String,
    pub answer: String,
}

/// Reasoning and answer blocks after normalization and delimiter split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedPair {
    reasoning_blocks: Vec<String>,
    answer_blocks: Vec<String>,
}

impl SegmentedPair {
    /// Normalizes and splits raw reasoning and answer text.
    pub fn segment(reasoning: &str, answer: &str, delimiter: &str) -> Result<Self, BuildError> {
        let reasoning_blocks = split_blocks(&normalize_whitespace(reasoning), delimiter)?;
        let answer_blocks = split_blocks(&normalize_whitespace(answer), delimiter)?;
        Ok(SegmentedPair { reasoning_blocks, answer_blocks })
    }

    /// Builds from pre-split blocks; every block must be non-empty.
    pub fn from_blocks(
        reasoning_blocks: Vec<String>,
        answer_blocks: Vec<String>,
    ) -> Result<Self, BuildError> {
        if reasoning_blocks.is_empty() || answer_blocks.is_empty() {
            return Err(BuildError::EmptyAfterSplit);
        }
        if reasoning_blocks.iter().chain(&answer_blocks).any(|b| b.is_empty()) {
            return Err(BuildError::InvariantViolation("empty block".to_string()));
        }
        Ok(SegmentedPair { reasoning_blocks, answer_blocks })
    }

    pub fn reasoning_blocks(&self) -> &[String] {
        &self.reasoning_blocks
    }

    pub fn answer_blocks(&self) -> &[String] {
        &self.answer_blocks
    }

    /// Number of reasoning blocks.
    pub fn k_r(&self) -> usize {
        self.reasoning_blocks.len()
    }

    /// Number of answer blocks.
    pub fn k_a(&self) -> usize {
        self.answer_blocks.len()
    }
}

/// Monotone entailment boundaries: entry `k` (0-based) is the largest answer
/// prefix supported by reasoning blocks `1..=k+1`. The final entry always
/// equals the answer block count, so the full answer is emitted even when
/// the checker is imperfect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryVector {
    boundaries: Vec<usize>,
    answer_blocks: usize,
}

impl BoundaryVector {
    pub fn new(boundaries: Vec<usize>, answer_blocks: usize) -> Result<Self, BuildError> {
        if boundaries.is_empty() {
            return Err(BuildError::InvariantViolation("boundary vector is empty".to_string()));
        }
        let mut prev = 0usize;
        for (i, &b) in boundaries.iter().enumerate() {
            if b < prev {
                return Err(BuildError::InvariantViolation(format!(
                    "boundaries not monotone at index {i}: {b} < {prev}"
                )));
            }
            if b > answer_blocks {
                return Err(BuildError::InvariantViolation(format!(
                    "boundary {b} at index {i} exceeds answer block count {answer_blocks}"
                )));
            }
            prev = b;
        }
        if *boundaries.last().unwrap() != answer_blocks {
            return Err(BuildError::InvariantViolation(format!(
                "terminal boundary {} != answer block count {answer_blocks}",
                boundaries.last().unwrap()
            )));
        }
        Ok(BoundaryVector { boundaries, answer_blocks })
    }

    pub fn values(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn answer_blocks(&self) -> usize {
        self.answer_blocks
    }
}

/// How the alignment boundaries were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    Sequential,
    Parallel,
}

/// Output of the interleaving build: an alternating think/speak sequence
/// with provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedSample {
    pub id: String,
    pub segments: Vec<Segment>,
    pub boundaries: BoundaryVector,
    pub oracle_mode: OracleMode,
    /// Smallest reasoning prefix whose check reported full coverage, when
    /// the parallel aligner observed one.
    pub cancelled_from: Option<usize>,
}

impl InterleavedSample {
    pub fn to_trajectory(&self, tokenizer: crate::tagged::TokenizerId) -> crate::tagged::Trajectory {
        crate::tagged::Trajectory::new(self.segments.clone(), tokenizer)
    }
}

/// Canonicalizes whitespace: any maximal whitespace run containing two or
/// more newlines collapses to exactly `"\n\n"`; single newlines and interior
/// horizontal whitespace survive; leading and trailing whitespace is
/// trimmed.
pub fn normalize_whitespace(text: &str) -> String {
    let trimmed = text.trim();
    let mut out = String::with_capacity(trimmed.len());
    let mut run = String::new();
    for ch in trimmed.chars() {
        if ch.is_whitespace() {
            run.push(ch);
        } else {
            if !run.is_empty() {
                flush_whitespace_run(&mut out, &run);
                run.clear();
            }
            out.push(ch);
        }
    }
    out
}

fn flush_whitespace_run(out: &mut String, run: &str) {
    if run.chars().filter(|&c| c == '\n').count() >= 2 {
        out.push_str("\n\n");
    } else {
        out.push_str(run);
    }
}

/// Splits on the delimiter, dropping empty blocks left by leading, trailing,
/// or doubled delimiters.
pub fn split_blocks(text: &str, delimiter: &str) -> Result<Vec<String>, BuildError> {
    if delimiter.is_empty() {
        return Err(BuildError::EmptyDelimiter);
    }
    let blocks: Vec<String> = text
        .split(delimiter)
        .filter(|b| !b.is_empty())
        .map(str::to_string)
        .collect();
    if blocks.is_empty() {
        return Err(BuildError::EmptyAfterSplit);
    }
    Ok(blocks)
}

/// Joins the newly unlocked answer blocks `prev+1 ..= next` (1-based) with
/// the delimiter, no trailing delimiter.
pub fn answer_increment(
    answer_blocks: &[String],
    prev: usize,
    next: usize,
    delimiter: &str,
) -> Result<String, BuildError> {
    if prev >= next || next > answer_blocks.len() {
        return Err(BuildError::RangeError { prev, next, blocks: answer_blocks.len() });
    }
    Ok(answer_blocks[prev..next].join(delimiter))
}

/// Weaves the triple's reasoning and answer blocks into an interleaved
/// sample following the unlock schedule in `boundaries`.
pub fn build_interleaved(
    triple: &Triple,
    boundaries: &BoundaryVector,
    delimiter: &str,
) -> Result<InterleavedSample, BuildError> {
    let pair = SegmentedPair::segment(&triple.reasoning, &triple.answer, delimiter)?;
    build_from_pair(&triple.id, &pair, boundaries, delimiter, OracleMode::Sequential, None)
}

/// As [`build_interleaved`] but from an already segmented pair, carrying
/// oracle provenance through to the sample.
pub fn build_from_pair(
    id: &str,
    pair: &SegmentedPair,
    boundaries: &BoundaryVector,
    delimiter: &str,
    oracle_mode: OracleMode,
    cancelled_from: Option<usize>,
) -> Result<InterleavedSample, BuildError> {
    if boundaries.len() != pair.k_r() {
        return Err(BuildError::InvariantViolation(format!(
            "boundary vector length {} != reasoning block count {}",
            boundaries.len(),
            pair.k_r()
        )));
    }
    if boundaries.answer_blocks() != pair.k_a() {
        return Err(BuildError::InvariantViolation(format!(
            "boundary answer count {} != answer block count {}",
            boundaries.answer_blocks(),
            pair.k_a()
        )));
    }

    let reasoning = pair.reasoning_blocks();
    let answers = pair.answer_blocks();
    let k_r = pair.k_r();
    let k_a = pair.k_a();

    let mut segments: Vec<Segment> = Vec::new();
    let mut prev = 0usize;
    let mut open = true;

    for (k, &bound) in boundaries.values().iter().enumerate() {
        let block = &reasoning[k];
        if open {
            segments.push(Segment::think(block.clone()));
            open = false;
        } else {
            let last = segments.last_mut().expect("a think segment is open");
            last.text.push_str(delimiter);
            last.text.push_str(block);
        }

        if bound > prev {
            let increment = answer_increment(answers, prev, bound, delimiter)?;
            segments.push(Segment::speak(increment));
            prev = bound;
            open = true;
        }

        if bound == k_a && k + 1 < k_r {
            segments.push(Segment::think(reasoning[k + 1..].join(delimiter)));
            break;
        }
    }

    Ok(InterleavedSample {
        id: id.to_string(),
        segments,
        boundaries: boundaries.clone(),
        oracle_mode,
        cancelled_from,
    })
}
