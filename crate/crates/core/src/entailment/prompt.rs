//! Coverage-decider prompt rendering, response parsing, and cache keys.

use super::{DeciderState, OracleError};
use sha2::{Digest, Sha256};

/// Version string mixed into replay-cache keys so that template changes
/// invalidate recorded responses.
pub const TEMPLATE_VERSION: &str = "decider-v1";

/// Fills the coverage-decider template with the given state. Remaining
/// blocks are rendered as `[BLOCK i] <text>` lines with 0-based indices.
pub fn render_decider_prompt(state: &DeciderState) -> String {
    let remaining = state
        .remaining_blocks
        .iter()
        .enumerate()
        .map(|(i, b)| format!("[BLOCK {i}] {b}"))
        .collect::<Vec<_>>()
        .join("\n");

    format!(
        r#"You are a **Response Coverage Decider**.
**Problem:** {problem}
**History:**
**Processed Thoughts:** {processed}
**Covered Responses:** {covered}
**Current**
**Current Thought:** {current}
**Remaining Response Blocks:**
{remaining}
---
**What the inputs are**
* **Processed Thoughts**: reasoning blocks already incorporated.
* **Covered Responses**: response blocks confirmed as supported.
* **Current Thought**: next reasoning block for coverage.
* **Remaining Response Blocks**: not yet covered, as `"[BLOCK i] <text>"` lines.
---
**Task**
Determine how many **Remaining Response Blocks** can move into **Covered Responses**, using **only**: **Processed + Current Thought** and applying **no-new-derivation entailment**:
**Entailment rule (NO-NEW-DERIVATION)**
A block is **addable** iff its content is established by thoughts and included **without additional reasoning**.
**Allowed "zero-derivation" (OK):**
* Paraphrase/synonym (exact meaning); Reformatting (punctuation/grammar); Definitional substitution; Notation normalization (if result exists); Adding implicit background knowledge; Dropping dead ends.
**Not allowed (NOT addable):**
* New inference steps; Combining facts into new claims; Generalizing/dropping caveats; New computation; Applying theorems implicitly.
**Conservative rule:** If unsure, treat as **NOT addable**.
---
**Contiguity constraint**
Only add a **prefix**: Add `k` blocks (0..k-1). Stop at the **first** non-addable block; do not skip.
---
**Output** (Return **ONLY** JSON):
```json
{{ "num_blocks": k }}
```
Where:
* `k` is the number of addable blocks from the start of Remaining Response Blocks.
* `k = 0` means add none.
* `k = 1` means add block 0 only.
* In general, add blocks `0..k-1`.
* `0 <= k <= M` (M = number of remaining blocks).
**Return JSON only. No extra keys.**"#,
        problem = state.problem,
        processed = state.processed_thoughts,
        covered = state.covered_responses,
        current = state.current_thought,
        remaining = remaining,
    )
}

/// Extracts `num_blocks` from a decider response and clamps it into
/// `[0, m]`. Accepts a bare JSON object, a fenced block, or an object
/// embedded in surrounding prose.
pub fn parse_decider_response(body: &str, m: usize) -> Result<usize, OracleError> {
    for candidate in json_object_candidates(body) {
        let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) else {
            continue;
        };
        let Some(n) = value.get("num_blocks") else { continue };
        if let Some(k) = number_as_i64(n) {
            return Ok(k.clamp(0, m as i64) as usize);
        }
    }
    Err(OracleError::Unparseable { snippet: snippet_of(body) })
}

fn number_as_i64(value: &serde_json::Value) -> Option<i64> {
    if let Some(i) = value.as_i64() {
        return Some(i);
    }
    if let Some(u) = value.as_u64() {
        return Some(u.min(i64::MAX as u64) as i64);
    }
    value.as_f64().map(|f| f.trunc() as i64)
}

/// All balanced `{...}` substrings, outermost first at each start position.
fn json_object_candidates(body: &str) -> Vec<&str> {
    let bytes = body.as_bytes();
    let mut candidates = Vec::new();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' {
            continue;
        }
        if let Some(end) = balanced_object_end(bytes, start) {
            candidates.push(&body[start..=end]);
        }
    }
    candidates
}

fn balanced_object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn snippet_of(body: &str) -> String {
    const LIMIT: usize = 120;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut end = LIMIT;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &body[..end])
    }
}

/// Replay-cache key: digest of the template version, problem, reasoning
/// prefix, and remaining blocks. Fields are length-prefixed so that
/// concatenation is unambiguous.
pub fn cache_key(state: &DeciderState) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |s: &str| {
        hasher.update((s.len() as u64).to_le_bytes());
        hasher.update(s.as_bytes());
    };
    feed(TEMPLATE_VERSION);
    feed(&state.problem);
    feed(&state.processed_thoughts);
    feed(&state.current_thought);
    feed(&state.remaining_blocks.len().to_string());
    for block in &state.remaining_blocks {
        feed(block);
    }
    hex::encode(hasher.finalize())
}

/// Deterministic 64-bit hash of string parts; stable across processes.
pub fn stable_hash64(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}
