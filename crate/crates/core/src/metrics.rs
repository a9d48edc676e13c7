//! Content-latency metrics over dual-channel trajectories.
//!
//! All positions are 1-indexed over the full (think + speak) token sequence.
//! The three headline statistics:
//!
//! - ARI: mean position of all speak tokens.
//! - ABO: mean onset position of maximal speak blocks.
//! - AIRW: mean length of the think spans waiting in front of speak blocks,
//!   leading span included, trailing span excluded.

use crate::tagged::{speak_block_views, token_count, tokenize, Channel, Trajectory};
use regex::Regex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("trajectory has no speak tokens")]
    NoSpeakTokens,
}

/// Mean 1-indexed position of all speak tokens (Average Response Index).
pub fn ari(traj: &Trajectory) -> Result<f64, MetricsError> {
    let mut sum = 0u64;
    let mut count = 0u64;
    let mut pos = 0u64;
    for seg in traj.segments() {
        let n = token_count(&seg.text, traj.tokenizer()) as u64;
        if seg.channel == Channel::Speak && n > 0 {
            // Positions pos+1 ..= pos+n sum to n*pos + n(n+1)/2.
            sum += n * pos + n * (n + 1) / 2;
            count += n;
        }
        pos += n;
    }
    if count == 0 {
        return Err(MetricsError::NoSpeakTokens);
    }
    Ok(sum as f64 / count as f64)
}

/// Mean onset index of maximal speak blocks (Average Block Onset).
pub fn abo(traj: &Trajectory) -> Result<f64, MetricsError> {
    let blocks = crate::tagged::speak_blocks(traj);
    if blocks.is_empty() {
        return Err(MetricsError::NoSpeakTokens);
    }
    let sum: u64 = blocks.iter().map(|b| b.onset as u64).sum();
    Ok(sum as f64 / blocks.len() as f64)
}

/// Mean length of the think spans that precede a speak block (Average
/// Inter-Response Wait). The leading span counts when non-empty; the
/// trailing span never does; zero when no span qualifies.
pub fn airw(traj: &Trajectory) -> Result<f64, MetricsError> {
    let blocks = crate::tagged::speak_blocks(traj);
    if blocks.is_empty() {
        return Err(MetricsError::NoSpeakTokens);
    }
    let mut spans = Vec::with_capacity(blocks.len());
    let mut prev_end = 0usize; // 1-indexed end of the previous speak block
    for block in &blocks {
        let wait = block.onset - prev_end - 1;
        if wait > 0 {
            spans.push(wait as u64);
        }
        prev_end = block.onset + block.len - 1;
    }
    if spans.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = spans.iter().sum();
    Ok(sum as f64 / spans.len() as f64)
}

/// (total, think, speak) token counts.
pub fn length_breakdown(traj: &Trajectory) -> (usize, usize, usize) {
    let think = traj.think_tokens();
    let speak = traj.speak_tokens();
    (think + speak, think, speak)
}

/// First public emission time: position of the first speak token, or
/// total + 1 when the trajectory never speaks.
pub fn first_emission_index(traj: &Trajectory) -> usize {
    let mut pos = 1usize;
    for seg in traj.segments() {
        let n = token_count(&seg.text, traj.tokenizer());
        if seg.channel == Channel::Speak && n > 0 {
            return pos;
        }
        pos += n;
    }
    pos
}

/// Decides whether a speak block carries substantive content: after the
/// stoplist phrases are removed (case-insensitively), the remainder must
/// match the answer pattern or retain a minimum number of tokens.
#[derive(Debug, Clone)]
pub struct SubstantivePredicateConfig {
    pub stoplist: Vec<String>,
    pub answer_pattern: Regex,
    pub min_content_tokens: usize,
}

impl Default for SubstantivePredicateConfig {
    fn default() -> Self {
        SubstantivePredicateConfig {
            stoplist: ["okay", "sure", "let me", "one moment", "working on it", "i will"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            answer_pattern: Regex::new(r"\d|\\boxed").expect("default pattern compiles"),
            min_content_tokens: 3,
        }
    }
}

impl SubstantivePredicateConfig {
    fn strip_stoplist(&self, text: &str) -> String {
        let mut kept = text.to_string();
        for phrase in &self.stoplist {
            if phrase.is_empty() {
                continue;
            }
            kept = remove_case_insensitive(&kept, phrase);
        }
        kept
    }

    fn qualifies(&self, text: &str, tokenizer: crate::tagged::TokenizerId) -> bool {
        let kept = self.strip_stoplist(text);
        if self.answer_pattern.is_match(&kept) {
            return true;
        }
        tokenize(&kept, tokenizer).len() >= self.min_content_tokens
    }
}

fn remove_case_insensitive(text: &str, phrase: &str) -> String {
    let lower_text = text.to_lowercase();
    let lower_phrase = phrase.to_lowercase();
    // Lowercasing can change byte lengths for some scripts; fall back to
    // exact matching when the two disagree so ranges stay aligned.
    if lower_text.len() != text.len() {
        return text.replace(phrase, "");
    }
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    while let Some(found) = lower_text[cursor..].find(&lower_phrase) {
        let start = cursor + found;
        out.push_str(&text[cursor..start]);
        cursor = start + lower_phrase.len();
    }
    out.push_str(&text[cursor..]);
    out
}

/// Onset of the first speak block whose content passes the substantive
/// predicate; `None` when no block qualifies.
pub fn substantive_onset(
    traj: &Trajectory,
    cfg: &SubstantivePredicateConfig,
) -> Option<usize> {
    speak_block_views(traj)
        .into_iter()
        .find(|block| cfg.qualifies(&block.text, traj.tokenizer()))
        .map(|block| block.onset)
}

/// Normalization applied to the disclosure-onset latency term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatencyNormalizer {
    #[default]
    ByTotalLength,
}

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub latency_normalizer: LatencyNormalizer,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { lambda: 0.1, latency_normalizer: LatencyNormalizer::ByTotalLength }
    }
}

/// Combined task-plus-latency objective: task loss (0 when the disclosed
/// answer checks out against gold, else 1) plus lambda times the normalized
/// substantive-disclosure onset (1.0 when nothing substantive is ever
/// disclosed).
pub fn objective(
    traj: &Trajectory,
    gold: &str,
    checker: impl Fn(&str, &str) -> bool,
    pred: &SubstantivePredicateConfig,
    cfg: &ObjectiveConfig,
) -> Result<f64, MetricsError> {
    if traj.speak_tokens() == 0 {
        return Err(MetricsError::NoSpeakTokens);
    }
    let answer = crate::tagged::project_channel(
        traj,
        Channel::Speak,
        crate::interleave::DEFAULT_DELIMITER,
    );
    let task_loss = if checker(&answer, gold) { 0.0 } else { 1.0 };
    let latency_loss = match cfg.latency_normalizer {
        LatencyNormalizer::ByTotalLength => match substantive_onset(traj, pred) {
            Some(onset) => onset as f64 / traj.total_tokens() as f64,
            None => 1.0,
        },
    };
    Ok(task_loss + cfg.lambda * latency_loss)
}

/// Per-trajectory metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ari: f64,
    pub abo: f64,
    pub airw: f64,
    pub total_tokens: usize,
    pub think_tokens: usize,
    pub speak_tokens: usize,
    pub k_star: usize,
    pub g_onset: Option<usize>,
}

impl MetricsReport {
    pub fn compute(
        traj: &Trajectory,
        pred: &SubstantivePredicateConfig,
    ) -> Result<Self, MetricsError> {
        let (total, think, speak) = length_breakdown(traj);
        Ok(MetricsReport {
            ari: ari(traj)?,
            abo: abo(traj)?,
            airw: airw(traj)?,
            total_tokens: total,
            think_tokens: think,
            speak_tokens: speak,
            k_star: first_emission_index(traj),
            g_onset: substantive_onset(traj, pred),
        })
    }
}

/// Brute-force reference: materializes the channel-per-token list and
/// enumerates positions. Slow but obviously correct; the fast paths are
/// checked against it.
pub mod reference {
    use super::MetricsError;
    use crate::tagged::{channel_per_token, Channel, Trajectory};

    pub fn ari(traj: &Trajectory) -> Result<f64, MetricsError> {
        let channels = channel_per_token(traj);
        let positions: Vec<f64> = channels
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Channel::Speak)
            .map(|(i, _)| (i + 1) as f64)
            .collect();
        if positions.is_empty() {
            return Err(MetricsError::NoSpeakTokens);
        }
        Ok(positions.iter().sum::<f64>() / positions.len() as f64)
    }

    pub fn abo(traj: &Trajectory) -> Result<f64, MetricsError> {
        let onsets = block_onsets(&channel_per_token(traj));
        if onsets.is_empty() {
            return Err(MetricsError::NoSpeakTokens);
        }
        Ok(onsets.iter().map(|&(onset, _)| onset as f64).sum::<f64>() / onsets.len() as f64)
    }

    pub fn airw(traj: &Trajectory) -> Result<f64, MetricsError> {
        let channels = channel_per_token(traj);
        let blocks = block_onsets(&channels);
        if blocks.is_empty() {
            return Err(MetricsError::NoSpeakTokens);
        }
        let mut spans = Vec::new();
        let mut prev_end = 0usize;
        for &(onset, len) in &blocks {
            let wait = onset - prev_end - 1;
            if wait > 0 {
                spans.push(wait as f64);
            }
            prev_end = onset + len - 1;
        }
        if spans.is_empty() {
            return Ok(0.0);
        }
        Ok(spans.iter().sum::<f64>() / spans.len() as f64)
    }

    fn block_onsets(channels: &[Channel]) -> Vec<(usize, usize)> {
        let mut blocks = Vec::new();
        let mut current: Option<(usize, usize)> = None;
        for (i, c) in channels.iter().enumerate() {
            match c {
                Channel::Speak => match current.as_mut() {
                    Some((_, len)) => *len += 1,
                    None => current = Some((i + 1, 1)),
                },
                Channel::Think => {
                    if let Some(block) = current.take() {
                        blocks.push(block);
                    }
                }
            }
        }
        if let Some(block) = current {
            blocks.push(block);
        }
        blocks
    }
}
