//! Shared line-stream plumbing: input/output opening and JSONL writing.
//!
//! Output files are written append-style, one record per line, flushed per
//! chunk, so an interrupted run leaves at worst a truncated final line.

use crate::config::CliError;
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Records processed per parallel chunk.
pub const CHUNK_SIZE: usize = 128;

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Config(format!("cannot open input {}: {e}", path.display())))
}

pub enum Output {
    File { writer: BufWriter<File>, path: PathBuf },
    Stdout(std::io::Stdout),
}

impl Output {
    pub fn create(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(path) => {
                let file = File::create(path).map_err(|e| {
                    CliError::Config(format!("cannot create output {}: {e}", path.display()))
                })?;
                Ok(Output::File { writer: BufWriter::new(file), path: path.to_path_buf() })
            }
            None => Ok(Output::Stdout(std::io::stdout())),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Output::File { path, .. } => Some(path),
            Output::Stdout(_) => None,
        }
    }

    pub fn write_json<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Hard(format!("serialization failed: {e}")))?;
        self.write_line(&line)
    }

    pub fn write_line(&mut self, line: &str) -> Result<(), CliError> {
        let result = match self {
            Output::File { writer, .. } => writeln!(writer, "{line}"),
            Output::Stdout(out) => writeln!(out, "{line}"),
        };
        result.map_err(|e| CliError::Hard(format!("write failed: {e}")))
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        let result = match self {
            Output::File { writer, .. } => writer.flush(),
            Output::Stdout(out) => out.flush(),
        };
        result.map_err(|e| CliError::Hard(format!("flush failed: {e}")))
    }
}

/// Iterates non-empty input lines with 1-based line numbers.
pub fn numbered_lines(
    reader: impl BufRead,
) -> impl Iterator<Item = Result<(usize, String), CliError>> {
    reader
        .lines()
        .enumerate()
        .map(|(idx, line)| {
            line.map(|l| (idx + 1, l))
                .map_err(|e| CliError::Hard(format!("read failed at line {}: {e}", idx + 1)))
        })
        .filter(|entry| !matches!(entry, Ok((_, line)) if line.trim().is_empty()))
}

/// One failed record, reported to stderr and the failure manifest.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub error: String,
}

/// Writes `<output>.failures.jsonl` next to the output file when there were
/// failures and the output is a file.
pub fn write_failure_manifest(
    output: &Output,
    failures: &[Failure],
) -> Result<Option<PathBuf>, CliError> {
    if failures.is_empty() {
        return Ok(None);
    }
    let Some(path) = output.path() else { return Ok(None) };
    let manifest_path = PathBuf::from(format!("{}.failures.jsonl", path.display()));
    let file = File::create(&manifest_path)
        .map_err(|e| CliError::Hard(format!("cannot write failure manifest: {e}")))?;
    let mut writer = BufWriter::new(file);
    for failure in failures {
        let line = serde_json::to_string(failure)
            .map_err(|e| CliError::Hard(format!("serialization failed: {e}")))?;
        writeln!(writer, "{line}")
            .map_err(|e| CliError::Hard(format!("manifest write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Hard(format!("manifest flush failed: {e}")))?;
    Ok(Some(manifest_path))
}
