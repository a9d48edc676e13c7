//! Construction and evaluation of interleaved think/speak reasoning
//! trajectories.
//!
//! The crate covers the full offline pipeline around dual-channel
//! generation:
//!
//! - [`tagged`]: parse and serialize tagged dual-channel text, tokenize it,
//!   and project either channel out of it.
//! - [`interleave`]: turn (prompt, reasoning, answer) triples plus an
//!   entailment boundary vector into alternating think/speak samples.
//! - [`entailment`]: the prefix-coverage oracle (remote, mock, or replay)
//!   and the sequential/parallel alignment orchestration that produces
//!   boundary vectors.
//! - [`metrics`]: token-level content-latency statistics (ARI, ABO, AIRW,
//!   first emission, substantive onset) and the combined objective.
//! - [`reward`]: outcome rewards, group filtering, advantages, and the
//!   margin-constrained quadratic reward shaping.
//! - [`records`]: the line-delimited wire formats shared with the CLI.
//! - [`batch`]: order-preserving data-parallel map with a sequential
//!   fallback behind the `parallel` feature.

pub mod batch;
pub mod entailment;
pub mod interleave;
pub mod metrics;
pub mod records;
pub mod reward;
pub mod tagged;
