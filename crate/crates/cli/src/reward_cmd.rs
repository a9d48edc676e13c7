//! `reward`: group records in, labels/rewards/advantages out.

use crate::config::CliError;
use crate::stream::{numbered_lines, open_input, Output, CHUNK_SIZE};
use pacekit_core::batch;
use pacekit_core::records::{parse_line, GroupOutputRecord, GroupRecord};
use pacekit_core::reward::{
    evaluate_group, GroupOptions, IncorrectPenaltyMode, ShapingConfig,
};
use pacekit_core::tagged::{parse_tagged_text, TagConfig, TokenizerId, Trajectory};
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct RewardSettings {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub shape: bool,
    pub epsilon: f64,
    pub s_min: f64,
    pub penalty_mode: IncorrectPenaltyMode,
    pub tokenizer: TokenizerId,
    pub delimiter: String,
}

impl RewardSettings {
    fn group_options(&self) -> GroupOptions {
        GroupOptions {
            shaping: self.shape.then(|| ShapingConfig {
                epsilon: self.epsilon,
                s_min: self.s_min,
                incorrect_penalty_mode: self.penalty_mode,
                ..Default::default()
            }),
            delimiter: self.delimiter.clone(),
            ..Default::default()
        }
    }
}

fn evaluate(
    group: &GroupRecord,
    settings: &RewardSettings,
    tags: &TagConfig,
    opts: &GroupOptions,
) -> Result<GroupOutputRecord, String> {
    let trajectories: Vec<Trajectory> = group
        .rollouts
        .iter()
        .enumerate()
        .map(|(idx, rollout)| {
            parse_tagged_text(&rollout.tagged_text, tags, settings.tokenizer)
                .map_err(|e| format!("rollout {idx}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    let evaluated =
        evaluate_group(trajectories, &group.gold, opts).map_err(|e| e.to_string())?;
    Ok(GroupOutputRecord {
        group_id: group.group_id.clone(),
        kept: evaluated.kept,
        labels: evaluated.labels().iter().map(|&b| u8::from(b)).collect(),
        rewards: evaluated.rewards,
        shaped: evaluated.shaped,
        advantages: evaluated.advantages,
        max_block_lengths: evaluated.max_block_lengths,
    })
}

pub fn cmd_reward(settings: &RewardSettings) -> Result<u8, CliError> {
    let reader = open_input(&settings.input)?;
    let mut output = Output::create(settings.output.as_deref())?;
    let tags = TagConfig::default();
    let opts = settings.group_options();
    let mut written = 0usize;
    let mut dropped = 0usize;
    let mut skipped = 0usize;

    let mut chunk: Vec<(usize, GroupRecord)> = Vec::with_capacity(CHUNK_SIZE);
    let flush = |chunk: &mut Vec<(usize, GroupRecord)>,
                     written: &mut usize,
                     dropped: &mut usize,
                     skipped: &mut usize,
                     output: &mut Output|
     -> Result<(), CliError> {
        if chunk.is_empty() {
            return Ok(());
        }
        let results =
            batch::map(chunk, |(_, group)| evaluate(group, settings, &tags, &opts));
        for ((line_no, group), result) in chunk.iter().zip(results) {
            match result {
                Ok(record) => {
                    *written += 1;
                    if !record.kept {
                        *dropped += 1;
                    }
                    output.write_json(&record)?;
                }
                Err(message) => {
                    *skipped += 1;
                    eprintln!(
                        "reward: skipping group `{}` (line {line_no}): {message}",
                        group.group_id
                    );
                }
            }
        }
        output.flush()?;
        chunk.clear();
        Ok(())
    };

    for entry in numbered_lines(reader) {
        let (line_no, line) = entry?;
        match parse_line::<GroupRecord>(&line, line_no) {
            Ok(group) => chunk.push((line_no, group)),
            Err(e) => {
                skipped += 1;
                eprintln!("reward: skipping line {line_no}: {e}");
            }
        }
        if chunk.len() >= CHUNK_SIZE {
            flush(&mut chunk, &mut written, &mut dropped, &mut skipped, &mut output)?;
        }
    }
    flush(&mut chunk, &mut written, &mut dropped, &mut skipped, &mut output)?;
    output.flush()?;
    eprintln!(
        "reward: {written} group(s) written ({dropped} dropped as low-signal), {skipped} skipped"
    );
    Ok(0)
}
