//! Outcome rewards, group-relative advantages, degenerate-group filtering,
//! and the optional correctness-preserving reward shaping.
//!
//! The default reward is the binary outcome label. Shaping replaces it with
//! the projection of per-rollout structure scores (shorter maximal think
//! spans score higher) onto the margin polyhedron, so correct rollouts keep
//! strictly positive advantages and incorrect ones strictly negative.

mod qp;

pub use qp::{kkt_residual, reference, shape_rewards_qp, verify_kkt};

use crate::tagged::{project_channel, token_count, Channel, Trajectory};

/// Numerical stabilizer added under the square root of the group variance.
pub const EPSILON_NUM_DEFAULT: f64 = 1e-8;
/// Raw group standard deviations below this are treated as degenerate.
pub const DEGENERATE_SIGMA_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("group of {size} rollout(s) is too small")]
    GroupTooSmall { size: usize },
    #[error("degenerate group: reward standard deviation {sigma} below threshold")]
    DegenerateGroup { sigma: f64 },
    #[error("no correct samples to normalize structure scores against")]
    NoCorrectSamples,
    #[error("shaping constraints are infeasible for homogeneous labels")]
    Infeasible,
    #[error("numerical failure: KKT residual {residual}")]
    NumericalFailure { residual: f64 },
    #[error("labels, scores, and lengths must agree in length")]
    MismatchedLengths,
}

/// 1 iff the answer matches gold after normalization: trim, collapse
/// internal whitespace, and unwrap a `\boxed{...}` payload on either side.
pub fn outcome_reward(answer: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(answer) == normalize_answer(gold))
}

fn normalize_answer(text: &str) -> String {
    let unboxed = extract_boxed(text).unwrap_or_else(|| text.to_string());
    unboxed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Payload of the last balanced `\boxed{...}` in the text, if any.
fn extract_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let start = text.rfind(MARKER)?;
    let inner_start = start + MARKER.len();
    let mut depth = 1usize;
    for (i, ch) in text[inner_start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[inner_start..inner_start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Group mean and stabilized standard deviation
/// `sqrt(population variance + eps_num)`.
pub fn group_stats(rewards: &[f64], eps_num: f64) -> Result<(f64, f64), RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall { size: rewards.len() });
    }
    let mu = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let var = rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / rewards.len() as f64;
    Ok((mu, (var + eps_num).sqrt()))
}

/// Standardized rewards `(R_i - mu) / sigma`. Groups whose raw standard
/// deviation sits below [`DEGENERATE_SIGMA_THRESHOLD`] carry no signal and
/// are rejected.
pub fn advantages(rewards: &[f64], eps_num: f64) -> Result<Vec<f64>, RewardError> {
    let (_, raw_sigma) = group_stats(rewards, 0.0)?;
    if raw_sigma < DEGENERATE_SIGMA_THRESHOLD {
        return Err(RewardError::DegenerateGroup { sigma: raw_sigma });
    }
    let (mu, sigma) = group_stats(rewards, eps_num)?;
    Ok(rewards.iter().map(|r| (r - mu) / sigma).collect())
}

/// Verdict of the low-signal group filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupFilter {
    Keep,
    Drop,
}

/// Drops groups whose rollouts are all correct or all incorrect.
pub fn filter_group(labels: &[bool]) -> GroupFilter {
    if labels.windows(2).all(|w| w[0] == w[1]) {
        GroupFilter::Drop
    } else {
        GroupFilter::Keep
    }
}

/// Longest contiguous run of think tokens; zero when the trajectory never
/// thinks.
pub fn max_block_length(traj: &Trajectory) -> usize {
    let mut best = 0usize;
    let mut run = 0usize;
    for seg in traj.segments() {
        let n = token_count(&seg.text, traj.tokenizer());
        if n == 0 {
            continue;
        }
        match seg.channel {
            Channel::Think => run += n,
            Channel::Speak => {
                best = best.max(run);
                run = 0;
            }
        }
    }
    best.max(run)
}

/// How incorrect rollouts are scored before shaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IncorrectPenaltyMode {
    /// Fixed penalty `-s_min`.
    ConstantSmin,
    /// Score as if the rollout had the longest think block in the batch.
    #[default]
    BatchMaxLength,
}

impl std::str::FromStr for IncorrectPenaltyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant-smin" | "constant_smin" => Ok(IncorrectPenaltyMode::ConstantSmin),
            "batch-max-length" | "batch_max_length" => Ok(IncorrectPenaltyMode::BatchMaxLength),
            other => Err(format!(
                "unknown penalty mode `{other}` (expected `constant-smin` or `batch-max-length`)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShapingConfig {
    /// Margin separating correct rewards above the mean from incorrect ones
    /// below it.
    pub epsilon: f64,
    /// Penalty magnitude for incorrect rollouts in constant mode.
    pub s_min: f64,
    pub incorrect_penalty_mode: IncorrectPenaltyMode,
    /// Substitute spread when all correct rollouts share one block length.
    pub sigma_fallback: f64,
    pub kkt_tol: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            epsilon: 0.5,
            s_min: 3.0,
            incorrect_penalty_mode: IncorrectPenaltyMode::BatchMaxLength,
            sigma_fallback: 1.0,
            kkt_tol: 1e-6,
        }
    }
}

/// Structure scores: correct rollouts get the negated standardized maximal
/// block length (statistics over correct rollouts only); incorrect rollouts
/// get the configured worst-case penalty.
pub fn structure_scores(
    lengths: &[usize],
    labels: &[bool],
    cfg: &ShapingConfig,
) -> Result<Vec<f64>, RewardError> {
    if lengths.len() != labels.len() {
        return Err(RewardError::MismatchedLengths);
    }
    let correct: Vec<f64> = lengths
        .iter()
        .zip(labels)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l as f64)
        .collect();
    if correct.is_empty() {
        return Err(RewardError::NoCorrectSamples);
    }
    let mu = correct.iter().sum::<f64>() / correct.len() as f64;
    let var = correct.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / correct.len() as f64;
    let sigma = if var == 0.0 { cfg.sigma_fallback } else { var.sqrt() };
    let batch_max = lengths.iter().copied().max().unwrap_or(0) as f64;

    Ok(lengths
        .iter()
        .zip(labels)
        .map(|(&l, &ok)| {
            if ok {
                -((l as f64 - mu) / sigma)
            } else {
                match cfg.incorrect_penalty_mode {
                    IncorrectPenaltyMode::ConstantSmin => -cfg.s_min,
                    IncorrectPenaltyMode::BatchMaxLength => -((batch_max - mu) / sigma),
                }
            }
        })
        .collect())
}

/// One rollout with its disclosed answer and correctness label.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub parsed_answer: String,
    pub gold: String,
    pub label: bool,
}

impl Rollout {
    /// Projects the speak channel and checks it against gold.
    pub fn evaluate(trajectory: Trajectory, gold: &str, delimiter: &str) -> Self {
        let parsed_answer = project_channel(&trajectory, Channel::Speak, delimiter);
        let label = outcome_reward(&parsed_answer, gold) == 1;
        Rollout { trajectory, parsed_answer, gold: gold.to_string(), label }
    }
}

/// A fully evaluated rollout group.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    /// Empty when the group was dropped.
    pub advantages: Vec<f64>,
    pub kept: bool,
    pub shaped: bool,
    pub max_block_lengths: Vec<usize>,
}

impl RolloutGroup {
    pub fn labels(&self) -> Vec<bool> {
        self.rollouts.iter().map(|r| r.label).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GroupOptions {
    pub shaping: Option<ShapingConfig>,
    pub epsilon_num: f64,
    pub delimiter: String,
}

impl Default for GroupOptions {
    fn default() -> Self {
        GroupOptions {
            shaping: None,
            epsilon_num: EPSILON_NUM_DEFAULT,
            delimiter: crate::interleave::DEFAULT_DELIMITER.to_string(),
        }
    }
}

/// Labels every rollout, applies the homogeneity filter, optionally shapes
/// rewards, and standardizes advantages. Dropped groups come back with
/// `kept = false`, outcome rewards, and no advantages.
pub fn evaluate_group(
    trajectories: Vec<Trajectory>,
    gold: &str,
    opts: &GroupOptions,
) -> Result<RolloutGroup, RewardError> {
    if trajectories.len() < 2 {
        return Err(RewardError::GroupTooSmall { size: trajectories.len() });
    }
    let rollouts: Vec<Rollout> = trajectories
        .into_iter()
        .map(|t| Rollout::evaluate(t, gold, &opts.delimiter))
        .collect();
    let labels: Vec<bool> = rollouts.iter().map(|r| r.label).collect();
    let max_block_lengths: Vec<usize> =
        rollouts.iter().map(|r| max_block_length(&r.trajectory)).collect();
    let outcome: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();

    if filter_group(&labels) == GroupFilter::Drop {
        return Ok(RolloutGroup {
            rollouts,
            rewards: outcome,
            advantages: Vec::new(),
            kept: false,
            shaped: false,
            max_block_lengths,
        });
    }

    let (rewards, shaped) = match &opts.shaping {
        Some(cfg) => {
            let scores = structure_scores(&max_block_lengths, &labels, cfg)?;
            let shaped = shape_rewards_qp(&scores, &labels, cfg.epsilon, cfg.kkt_tol)?;
            (shaped, true)
        }
        None => (outcome, false),
    };
    let advantages = advantages(&rewards, opts.epsilon_num)?;

    Ok(RolloutGroup { rollouts, rewards, advantages, kept: true, shaped, max_block_lengths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagged::{Segment, TokenizerId};

    #[test]
    fn outcome_reward_normalizes() {
        assert_eq!(outcome_reward("42", "42"), 1);
        assert_eq!(outcome_reward(" 42 ", "42"), 1);
        assert_eq!(outcome_reward("so \\boxed{42}", "42"), 1);
        assert_eq!(outcome_reward("a  b\tc", "a b c"), 1);
        assert_eq!(outcome_reward("43", "42"), 0);
        assert_eq!(outcome_reward("\\boxed{\\frac{1}{2}}", "\\frac{1}{2}"), 1);
        // Unbalanced box is treated as plain text.
        assert_eq!(outcome_reward("\\boxed{42", "\\boxed{42"), 1);
    }

    #[test]
    fn group_stats_examples() {
        assert_eq!(group_stats(&[1.0, 1.0, 0.0, 0.0], 0.0).unwrap(), (0.5, 0.5));
        let (mu, sigma) = group_stats(&[1.0, 1.0, 1.0, 1.0], 1e-8).unwrap();
        assert_eq!(mu, 1.0);
        assert!((sigma - 1e-4).abs() < 1e-12);
        assert_eq!(group_stats(&[0.0, 0.0], 0.0).unwrap(), (0.0, 0.0));
        assert!(matches!(
            group_stats(&[1.0], 0.0),
            Err(RewardError::GroupTooSmall { size: 1 })
        ));
    }

    #[test]
    fn advantages_standardize() {
        assert_eq!(advantages(&[1.0, 1.0, 0.0, 0.0], 0.0).unwrap(), vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(advantages(&[1.0, 0.0], 0.0).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(
            advantages(&[0.7, 0.7, 0.7], 1e-8),
            Err(RewardError::DegenerateGroup { .. })
        ));
    }

    #[test]
    fn filter_drops_homogeneous_groups() {
        assert_eq!(filter_group(&[true, true, true, true]), GroupFilter::Drop);
        assert_eq!(filter_group(&[true, false, true, false]), GroupFilter::Keep);
        assert_eq!(filter_group(&[false, false]), GroupFilter::Drop);
    }

    fn traj(segments: Vec<Segment>) -> Trajectory {
        Trajectory::new(segments, TokenizerId::Whitespace)
    }

    #[test]
    fn max_block_length_examples() {
        let t = traj(vec![
            Segment::think("a b c"),
            Segment::speak("d e"),
            Segment::think("f g"),
            Segment::speak("h"),
        ]);
        assert_eq!(max_block_length(&t), 3);
        assert_eq!(max_block_length(&traj(vec![Segment::speak("a b")])), 0);
        assert_eq!(max_block_length(&traj(vec![Segment::think("a b c d e f g")])), 7);
    }

    #[test]
    fn structure_scores_constant_mode() {
        let cfg = ShapingConfig {
            incorrect_penalty_mode: IncorrectPenaltyMode::ConstantSmin,
            s_min: 3.0,
            ..Default::default()
        };
        let scores = structure_scores(&[10, 20, 15], &[true, true, false], &cfg).unwrap();
        assert_eq!(scores, vec![1.0, -1.0, -3.0]);
    }

    #[test]
    fn structure_scores_sigma_fallback() {
        let cfg = ShapingConfig::default();
        let scores = structure_scores(&[10, 10], &[true, true], &cfg).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn structure_scores_batch_max_mode() {
        let cfg = ShapingConfig::default();
        let scores = structure_scores(&[10, 20], &[true, false], &cfg).unwrap();
        // Correct stats: mu = 10, sigma falls back to 1; incorrect scored at
        // the batch max of 20.
        assert_eq!(scores, vec![0.0, -10.0]);
    }

    #[test]
    fn structure_scores_errors() {
        let cfg = ShapingConfig::default();
        assert!(matches!(
            structure_scores(&[1, 2], &[false, false], &cfg),
            Err(RewardError::NoCorrectSamples)
        ));
        assert!(matches!(
            structure_scores(&[1], &[true, false], &cfg),
            Err(RewardError::MismatchedLengths)
        ));
    }

    fn think_speak(think: usize, answer: &str) -> Trajectory {
        let think_text = (0..think).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        traj(vec![Segment::think(think_text), Segment::speak(answer.to_string())])
    }

    #[test]
    fn evaluate_group_without_shaping() {
        let group = evaluate_group(
            vec![
                think_speak(3, "42"),
                think_speak(5, "42"),
                think_speak(2, "7"),
                think_speak(9, "7"),
            ],
            "42",
            &GroupOptions::default(),
        )
        .unwrap();
        assert!(group.kept);
        assert!(!group.shaped);
        assert_eq!(group.labels(), vec![true, true, false, false]);
        assert_eq!(group.rewards, vec![1.0, 1.0, 0.0, 0.0]);
        let mean: f64 = group.advantages.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() <= 1e-9);
        assert_eq!(group.max_block_lengths, vec![3, 5, 2, 9]);
    }

    #[test]
    fn evaluate_group_drops_homogeneous() {
        let group = evaluate_group(
            vec![think_speak(1, "42"), think_speak(2, "42")],
            "42",
            &GroupOptions::default(),
        )
        .unwrap();
        assert!(!group.kept);
        assert!(group.advantages.is_empty());
        assert_eq!(group.rewards, vec![1.0, 1.0]);
    }

    #[test]
    fn evaluate_group_with_shaping_separates_signs() {
        let opts = GroupOptions {
            shaping: Some(ShapingConfig::default()),
            ..Default::default()
        };
        let group = evaluate_group(
            vec![
                think_speak(3, "42"),
                think_speak(12, "42"),
                think_speak(5, "7"),
                think_speak(2, "7"),
            ],
            "42",
            &opts,
        )
        .unwrap();
        assert!(group.kept);
        assert!(group.shaped);
        for (adv, label) in group.advantages.iter().zip(group.labels()) {
            if label {
                assert!(*adv > 0.0);
            } else {
                assert!(*adv < 0.0);
            }
        }
        // Shorter think blocks rank higher among correct rollouts.
        assert!(group.rewards[0] > group.rewards[1]);
    }

    #[test]
    fn evaluate_group_rejects_tiny_groups() {
        assert!(matches!(
            evaluate_group(vec![think_speak(1, "x")], "x", &GroupOptions::default()),
            Err(RewardError::GroupTooSmall { size: 1 })
        ));
    }
}
