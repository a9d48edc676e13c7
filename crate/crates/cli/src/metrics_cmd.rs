//! `metrics`: per-record content-latency reports plus an aggregate line.
//!
//! Accepts interleaved samples (`segments`), tagged text (`tagged_text`),
//! or pre-tokenized streams (`tokens`); records that fail to parse or never
//! speak are skipped and counted, not fatal.

use crate::config::CliError;
use crate::stream::{numbered_lines, open_input, Output, CHUNK_SIZE};
use pacekit_core::batch;
use pacekit_core::metrics::{
    objective, MetricsReport, ObjectiveConfig, SubstantivePredicateConfig,
};
use pacekit_core::records::{MetricsAggregate, MetricsMeans, MetricsRecord};
use pacekit_core::reward::outcome_reward;
use pacekit_core::tagged::{
    parse_tagged_text, Channel, Segment, TagConfig, TokenizerId, Trajectory,
};
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct MetricsSettings {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub tokenizer: TokenizerId,
    pub lambda: f64,
}

struct MetricsEntry {
    id: String,
    payload: Payload,
    gold: Option<String>,
}

enum Payload {
    Segments(Vec<Segment>),
    Tagged(String),
    Pretokenized(Vec<(String, Channel)>),
}

fn parse_entry(line: &str) -> Result<MetricsEntry, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or("missing string field `id`")?
        .to_string();
    let gold = value.get("gold").and_then(|v| v.as_str()).map(str::to_string);

    let payload = if let Some(segments) = value.get("segments") {
        let segments: Vec<Segment> = serde_json::from_value(segments.clone())
            .map_err(|e| format!("invalid `segments`: {e}"))?;
        Payload::Segments(segments)
    } else if let Some(text) = value.get("tagged_text") {
        let text = text.as_str().ok_or("`tagged_text` must be a string")?;
        Payload::Tagged(text.to_string())
    } else if let Some(tokens) = value.get("tokens") {
        let tokens: Vec<pacekit_core::records::TokenRecord> =
            serde_json::from_value(tokens.clone()).map_err(|e| format!("invalid `tokens`: {e}"))?;
        Payload::Pretokenized(tokens.into_iter().map(|t| (t.t, t.c)).collect())
    } else {
        return Err("record has none of `segments`, `tagged_text`, `tokens`".to_string());
    };
    Ok(MetricsEntry { id, payload, gold })
}

fn evaluate(
    entry: &MetricsEntry,
    tokenizer: TokenizerId,
    tags: &TagConfig,
    pred: &SubstantivePredicateConfig,
    obj_cfg: &ObjectiveConfig,
) -> Result<MetricsRecord, String> {
    let trajectory = match &entry.payload {
        Payload::Segments(segments) => Trajectory::new(segments.clone(), tokenizer),
        Payload::Tagged(text) => {
            parse_tagged_text(text, tags, tokenizer).map_err(|e| e.to_string())?
        }
        Payload::Pretokenized(tokens) => {
            Trajectory::from_pretokenized(tokens).map_err(|e| e.to_string())?
        }
    };
    let report = MetricsReport::compute(&trajectory, pred).map_err(|e| e.to_string())?;
    let objective_value = match &entry.gold {
        Some(gold) => Some(
            objective(
                &trajectory,
                gold,
                |answer, gold| outcome_reward(answer, gold) == 1,
                pred,
                obj_cfg,
            )
            .map_err(|e| e.to_string())?,
        ),
        None => None,
    };
    Ok(MetricsRecord {
        id: entry.id.clone(),
        ari: report.ari,
        abo: report.abo,
        airw: report.airw,
        total_tokens: report.total_tokens,
        think_tokens: report.think_tokens,
        speak_tokens: report.speak_tokens,
        k_star: report.k_star,
        g_onset: report.g_onset,
        objective: objective_value,
    })
}

#[derive(Default)]
struct Accumulator {
    records: usize,
    skipped: usize,
    ari: f64,
    abo: f64,
    airw: f64,
    total: f64,
    think: f64,
    speak: f64,
    k_star: f64,
    g_onset_sum: f64,
    g_onset_present: usize,
}

impl Accumulator {
    fn add(&mut self, record: &MetricsRecord) {
        self.records += 1;
        self.ari += record.ari;
        self.abo += record.abo;
        self.airw += record.airw;
        self.total += record.total_tokens as f64;
        self.think += record.think_tokens as f64;
        self.speak += record.speak_tokens as f64;
        self.k_star += record.k_star as f64;
        if let Some(onset) = record.g_onset {
            self.g_onset_sum += onset as f64;
            self.g_onset_present += 1;
        }
    }

    fn means(&self) -> MetricsMeans {
        let n = self.records.max(1) as f64;
        MetricsMeans {
            records: self.records,
            skipped: self.skipped,
            mean_ari: self.ari / n,
            mean_abo: self.abo / n,
            mean_airw: self.airw / n,
            mean_total_tokens: self.total / n,
            mean_think_tokens: self.think / n,
            mean_speak_tokens: self.speak / n,
            mean_k_star: self.k_star / n,
            mean_g_onset: (self.g_onset_present > 0)
                .then(|| self.g_onset_sum / self.g_onset_present as f64),
            g_onset_present: self.g_onset_present,
        }
    }
}

pub fn cmd_metrics(settings: &MetricsSettings) -> Result<u8, CliError> {
    let reader = open_input(&settings.input)?;
    let mut output = Output::create(settings.output.as_deref())?;
    let tags = TagConfig::default();
    let pred = SubstantivePredicateConfig::default();
    let obj_cfg = ObjectiveConfig { lambda: settings.lambda, ..Default::default() };
    let mut acc = Accumulator::default();

    let mut chunk: Vec<MetricsEntry> = Vec::with_capacity(CHUNK_SIZE);
    let flush = |chunk: &mut Vec<MetricsEntry>,
                     acc: &mut Accumulator,
                     output: &mut Output|
     -> Result<(), CliError> {
        if chunk.is_empty() {
            return Ok(());
        }
        let results = batch::map(chunk, |entry| {
            evaluate(entry, settings.tokenizer, &tags, &pred, &obj_cfg)
        });
        for (entry, result) in chunk.iter().zip(results) {
            match result {
                Ok(record) => {
                    acc.add(&record);
                    output.write_json(&record)?;
                }
                Err(message) => {
                    acc.skipped += 1;
                    eprintln!("metrics: skipping record `{}`: {message}", entry.id);
                }
            }
        }
        output.flush()?;
        chunk.clear();
        Ok(())
    };

    for entry in numbered_lines(reader) {
        let (line_no, line) = entry?;
        match parse_entry(&line) {
            Ok(parsed) => chunk.push(parsed),
            Err(message) => {
                acc.skipped += 1;
                eprintln!("metrics: skipping line {line_no}: {message}");
            }
        }
        if chunk.len() >= CHUNK_SIZE {
            flush(&mut chunk, &mut acc, &mut output)?;
        }
    }
    flush(&mut chunk, &mut acc, &mut output)?;

    output.write_json(&MetricsAggregate { aggregate: acc.means() })?;
    output.flush()?;
    eprintln!("metrics: {} record(s), {} skipped", acc.records, acc.skipped);
    Ok(0)
}
