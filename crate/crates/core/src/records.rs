//! Line-delimited record schemas shared by the library and the CLI.

use crate::interleave::{BoundaryVector, InterleavedSample, OracleMode};
use crate::tagged::{Channel, Segment};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses one JSONL line, attributing failures to its 1-based line number.
pub fn parse_line<T: serde::de::DeserializeOwned>(
    line: &str,
    line_no: usize,
) -> Result<T, RecordError> {
    serde_json::from_str(line).map_err(|e| RecordError::Schema {
        line: line_no,
        message: e.to_string(),
    })
}

/// Input triple: `{"id", "prompt", "reasoning", "answer"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleRecord {
    pub id: String,
    pub prompt: String,
    pub reasoning: String,
    pub answer: String,
}

/// Built sample: segments plus alignment provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub segments: Vec<Segment>,
    pub boundaries: Vec<usize>,
    pub oracle_mode: OracleMode,
    pub cancelled_from: Option<usize>,
}

impl From<&InterleavedSample> for SampleRecord {
    fn from(sample: &InterleavedSample) -> Self {
        SampleRecord {
            id: sample.id.clone(),
            segments: sample.segments.clone(),
            boundaries: sample.boundaries.values().to_vec(),
            oracle_mode: sample.oracle_mode,
            cancelled_from: sample.cancelled_from,
        }
    }
}

impl SampleRecord {
    /// Re-validates the boundary invariants on the way back in.
    pub fn into_sample(self) -> Result<InterleavedSample, crate::interleave::BuildError> {
        let answer_blocks = self
            .segments
            .iter()
            .filter(|s| s.channel == Channel::Speak)
            .map(|s| s.text.split(crate::interleave::DEFAULT_DELIMITER).count())
            .sum::<usize>();
        let declared = *self.boundaries.last().unwrap_or(&answer_blocks);
        let boundaries = BoundaryVector::new(self.boundaries, declared)?;
        Ok(InterleavedSample {
            id: self.id,
            segments: self.segments,
            boundaries,
            oracle_mode: self.oracle_mode,
            cancelled_from: self.cancelled_from,
        })
    }
}

/// One pre-tokenized token with its channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRecord {
    pub t: String,
    pub c: Channel,
}

/// Pre-tokenized ingestion record: `{"id", "tokens": [{"t", "c"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretokenizedRecord {
    pub id: String,
    pub tokens: Vec<TokenRecord>,
}

/// Tagged-text record accepted by the metrics command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggedTextRecord {
    pub id: String,
    pub tagged_text: String,
}

/// Per-trajectory metrics line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: String,
    pub ari: f64,
    pub abo: f64,
    pub airw: f64,
    pub total_tokens: usize,
    pub think_tokens: usize,
    pub speak_tokens: usize,
    pub k_star: usize,
    pub g_onset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

/// Aggregate emitted as the final line of a metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub aggregate: MetricsMeans,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsMeans {
    pub records: usize,
    pub skipped: usize,
    pub mean_ari: f64,
    pub mean_abo: f64,
    pub mean_airw: f64,
    pub mean_total_tokens: f64,
    pub mean_think_tokens: f64,
    pub mean_speak_tokens: f64,
    pub mean_k_star: f64,
    pub mean_g_onset: Option<f64>,
    pub g_onset_present: usize,
}

/// Reward-group input: gold answer plus tagged rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: String,
    pub gold: String,
    pub rollouts: Vec<RolloutRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub tagged_text: String,
}

/// Reward-group output line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupOutputRecord {
    pub group_id: String,
    pub kept: bool,
    pub labels: Vec<u8>,
    pub rewards: Vec<f64>,
    pub shaped: bool,
    pub advantages: Vec<f64>,
    pub max_block_lengths: Vec<usize>,
}

/// Replay-cache line: `{"key", "response"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key: String,
    pub response: String,
}
