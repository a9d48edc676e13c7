//! CLI behavior: exit codes, failure manifests, config files, record
//! variants, and the record/replay loop against a scripted endpoint.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_pacekit")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> std::process::Output {
    Command::new(binary()).args(args).env(key, value).output().expect("binary runs")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).expect("fixture written");
    path.to_str().unwrap().to_string()
}

const TRIPLE: &str = r#"{"id":"t1","prompt":"p","reasoning":"r1.\n\nr2.\n\nr3.","answer":"a1.\n\na2."}"#;

#[test]
fn missing_input_is_a_config_error() {
    let out = run(&["build", "--input", "/nonexistent/triples.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["build"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_mode_and_oracle_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let out = run(&["build", "--input", &input, "--mode", "diagonal"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["build", "--input", &input, "--oracle", "psychic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_input_builds_nothing_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", "");
    let output = dir.path().join("out.jsonl");
    let out = run(&["build", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(output).unwrap(), "");
}

#[test]
fn malformed_line_fails_run_but_flushes_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(
        dir.path(),
        "in.jsonl",
        &format!("{TRIPLE}\nnot json\n"),
    );
    let output = dir.path().join("out.jsonl");
    let out = run(&["build", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let written = std::fs::read_to_string(&output).unwrap();
    assert_eq!(written.lines().count(), 1, "good record still written");
    let manifest =
        std::fs::read_to_string(format!("{}.failures.jsonl", output.display())).unwrap();
    assert!(manifest.contains("\"line\":2"));
}

#[test]
fn config_file_drives_build_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    let config = write_file(
        dir.path(),
        "run.conf",
        &format!(
            "input = {input}\nmode = parallel\noracle = mock\nseed = 3\ndelimiter = \\n\\n\n"
        ),
    );

    let out = run(&["build", "--config", &config, "--output", out_a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(&out_a).unwrap();
    assert!(a.contains("\"oracle_mode\":\"parallel\""));

    // Flag wins over the file.
    let out = run(&[
        "build",
        "--config",
        &config,
        "--mode",
        "sequential",
        "--output",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let b = std::fs::read_to_string(&out_b).unwrap();
    assert!(b.contains("\"oracle_mode\":\"sequential\""));
}

#[test]
fn bad_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let config = write_file(dir.path(), "run.conf", "turbo = yes\n");
    let out = run(&["build", "--input", &input, "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_accepts_all_record_shapes_and_skips_bad_ones() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        // Tagged text.
        r#"{"id":"tagged","tagged_text":"<think>a b</think><speak>c 42</speak>"}"#,
        // Pre-tokenized.
        r#"{"id":"pretok","tokens":[{"t":"x","c":"think"},{"t":"7","c":"speak"}]}"#,
        // Segments, with gold so the objective is attached.
        r#"{"id":"segs","gold":"c 42","segments":[{"channel":"think","text":"a b"},{"channel":"speak","text":"c 42"}]}"#,
        // No speak tokens: skipped.
        r#"{"id":"silent","tagged_text":"<think>a b</think>"}"#,
        // Unrecognized shape: skipped.
        r#"{"id":"mystery","payload":1}"#,
        "not json",
    ]
    .join("\n");
    let input = write_file(dir.path(), "in.jsonl", &lines);
    let output = dir.path().join("out.jsonl");
    let out = run(&["metrics", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("3 record(s), 3 skipped"), "stderr: {stderr}");

    let written = std::fs::read_to_string(&output).unwrap();
    let lines: Vec<&str> = written.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].contains("\"objective\":"));
    let aggregate: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(aggregate["aggregate"]["records"], 3);
    assert_eq!(aggregate["aggregate"]["skipped"], 3);
}

#[test]
fn metrics_aggregate_has_cot_identity_on_think_then_speak_records() {
    let dir = tempfile::tempdir().unwrap();
    // Think-then-speak records of varying lengths: per the single-block
    // identity, mean AIRW must equal mean ABO minus one exactly.
    let lines: Vec<String> = (0..20)
        .map(|i| {
            let think = (0..(i + 1)).map(|t| format!("t{t}")).collect::<Vec<_>>().join(" ");
            let speak = (0..(i % 3 + 1)).map(|s| format!("s{s}")).collect::<Vec<_>>().join(" ");
            format!(
                r#"{{"id":"cot{i}","tagged_text":"<think>{think}</think><speak>{speak}</speak>"}}"#
            )
        })
        .collect();
    let input = write_file(dir.path(), "in.jsonl", &lines.join("\n"));
    let output = dir.path().join("out.jsonl");
    let out = run(&["metrics", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let written = std::fs::read_to_string(&output).unwrap();
    let aggregate: serde_json::Value =
        serde_json::from_str(written.lines().last().unwrap()).unwrap();
    let mean_abo = aggregate["aggregate"]["mean_abo"].as_f64().unwrap();
    let mean_airw = aggregate["aggregate"]["mean_airw"].as_f64().unwrap();
    assert_eq!(mean_airw, mean_abo - 1.0);
}

#[test]
fn metrics_empty_input_emits_zero_record_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", "");
    let output = dir.path().join("out.jsonl");
    let out = run(&["metrics", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let written = std::fs::read_to_string(&output).unwrap();
    let aggregate: serde_json::Value =
        serde_json::from_str(written.lines().next().unwrap()).unwrap();
    assert_eq!(aggregate["aggregate"]["records"], 0);
}

#[test]
fn reward_without_shaping_standardizes_outcome_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let line = r#"{"group_id":"g","gold":"4","rollouts":[{"tagged_text":"<think>a</think><speak>4</speak>"},{"tagged_text":"<think>b</think><speak>4</speak>"},{"tagged_text":"<think>c</think><speak>5</speak>"},{"tagged_text":"<think>d</think><speak>6</speak>"}]}"#;
    let input = write_file(dir.path(), "in.jsonl", line);
    let output = dir.path().join("out.jsonl");
    let out = run(&["reward", "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let record: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&output).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(record["rewards"], serde_json::json!([1.0, 1.0, 0.0, 0.0]));
    let advantages: Vec<f64> = record["advantages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (adv, want) in advantages.iter().zip([1.0, 1.0, -1.0, -1.0]) {
        assert!((adv - want).abs() < 1e-6, "{adv} vs {want}");
    }
}

#[test]
fn reward_drops_homogeneous_groups_and_separates_signs() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"group_id":"mixed","gold":"4","rollouts":[{"tagged_text":"<think>a b</think><speak>4</speak>"},{"tagged_text":"<think>a</think><speak>5</speak>"},{"tagged_text":"<think>a b c</think><speak>4</speak>"},{"tagged_text":"<think>a b c d</think><speak>6</speak>"}]}"#,
        r#"{"group_id":"uniform","gold":"4","rollouts":[{"tagged_text":"<think>a</think><speak>4</speak>"},{"tagged_text":"<think>b</think><speak>4</speak>"}]}"#,
        r#"{"group_id":"tiny","gold":"4","rollouts":[{"tagged_text":"<think>a</think><speak>4</speak>"}]}"#,
    ]
    .join("\n");
    let input = write_file(dir.path(), "in.jsonl", &lines);
    let output = dir.path().join("out.jsonl");
    let out = run(&[
        "reward",
        "--input",
        &input,
        "--output",
        output.to_str().unwrap(),
        "--shape",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let written = std::fs::read_to_string(&output).unwrap();
    let records: Vec<serde_json::Value> =
        written.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2, "tiny group is skipped");

    let mixed = &records[0];
    assert_eq!(mixed["kept"], true);
    assert_eq!(mixed["shaped"], true);
    let labels: Vec<i64> =
        mixed["labels"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
    let advantages: Vec<f64> =
        mixed["advantages"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (label, adv) in labels.iter().zip(&advantages) {
        if *label == 1 {
            assert!(*adv > 0.0);
        } else {
            assert!(*adv < 0.0);
        }
    }

    let uniform = &records[1];
    assert_eq!(uniform["kept"], false);
    assert_eq!(uniform["shaped"], false);
    assert!(uniform["advantages"].as_array().unwrap().is_empty());
}

/// Tiny HTTP responder: answers every chat-completions POST with the same
/// assistant message, forever, on a loopback port.
fn constant_responder(num_blocks: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut buf = [0u8; 65536];
            let mut seen = Vec::new();
            while let Ok(n) = stream.read(&mut buf) {
                seen.extend_from_slice(&buf[..n]);
                if let Some(pos) = seen.windows(4).position(|w| w == b"\r\n\r\n") {
                    let headers = String::from_utf8_lossy(&seen[..pos]).to_lowercase();
                    let expected = headers
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:"))
                        .and_then(|v| v.trim().parse::<usize>().ok())
                        .unwrap_or(0);
                    if seen.len() >= pos + 4 + expected {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let content = format!("{{\\\"num_blocks\\\": {num_blocks}}}");
            let body = format!(
                "{{\"choices\":[{{\"message\":{{\"role\":\"assistant\",\"content\":\"{content}\"}}}}]}}"
            );
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    format!("http://{addr}")
}

#[test]
fn replay_record_then_replay_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let triples = [
        TRIPLE,
        r#"{"id":"t2","prompt":"q","reasoning":"s1.\n\ns2.","answer":"b1."}"#,
    ]
    .join("\n");
    let input = write_file(dir.path(), "in.jsonl", &triples);
    let endpoint = constant_responder(1);
    let cache = dir.path().join("cache.jsonl");
    let recorded = dir.path().join("recorded.jsonl");

    let out = run_with_env(
        &[
            "replay-record",
            "--input",
            &input,
            "--output",
            recorded.to_str().unwrap(),
            "--endpoint",
            &endpoint,
            "--model",
            "decider",
            "--mode",
            "sequential",
            "--replay-cache",
            cache.to_str().unwrap(),
        ],
        "OPENAI_API_KEY",
        "test-key",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cache.exists());
    let cache_lines = std::fs::read_to_string(&cache).unwrap();
    assert!(cache_lines.lines().count() >= 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cache hit rate"), "stderr: {stderr}");

    // Replaying from the recorded cache reproduces the run byte for byte,
    // with no endpoint in sight.
    let replayed = dir.path().join("replayed.jsonl");
    let out = run(&[
        "build",
        "--input",
        &input,
        "--output",
        replayed.to_str().unwrap(),
        "--oracle",
        "replay",
        "--mode",
        "sequential",
        "--replay-cache",
        cache.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(&recorded).unwrap(),
        std::fs::read(&replayed).unwrap(),
        "replay must reproduce the recorded run"
    );
}

#[test]
fn replay_with_missing_keys_fails_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let cache = write_file(dir.path(), "cache.jsonl", r#"{"key":"deadbeef","response":"{}"}"#);
    let output = dir.path().join("out.jsonl");
    let out = run(&[
        "build",
        "--input",
        &input,
        "--output",
        output.to_str().unwrap(),
        "--oracle",
        "replay",
        "--replay-cache",
        &cache,
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupted_replay_cache_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let cache = write_file(
        dir.path(),
        "cache.jsonl",
        "{\"key\":\"a\",\"response\":\"{}\"}\ngarbage line\n",
    );
    let out = run(&[
        "build",
        "--input",
        &input,
        "--oracle",
        "replay",
        "--replay-cache",
        &cache,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");

    let missing = run(&[
        "build",
        "--input",
        &input,
        "--oracle",
        "replay",
        "--replay-cache",
        "/nonexistent/cache.jsonl",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn remote_without_credentials_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "in.jsonl", TRIPLE);
    let out = Command::new(binary())
        .args([
            "build",
            "--input",
            &input,
            "--oracle",
            "remote",
            "--endpoint",
            "http://127.0.0.1:9",
            "--model",
            "decider",
        ])
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}
