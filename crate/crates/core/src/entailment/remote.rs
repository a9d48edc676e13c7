//! Chat-completions client for a remote coverage decider.
//!
//! One request per check against an OpenAI-compatible endpoint, with
//! exponential backoff on transient failures and a process-wide cap on
//! in-flight requests.

use super::oracle::EntailmentOracle;
use super::prompt::render_decider_prompt;
use super::{DeciderState, OracleConfig, OracleError, Semaphore};
use serde::Deserialize;
use std::time::Duration;

pub struct RemoteOracle {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
    max_retries: u32,
    backoff_base: Duration,
    gate: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl RemoteOracle {
    pub fn new(cfg: &OracleConfig) -> Result<Self, OracleError> {
        cfg.validate()?;
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| OracleError::InvalidConfig("remote mode requires an endpoint".into()))?;
        let model = cfg
            .model_name
            .clone()
            .ok_or_else(|| OracleError::InvalidConfig("remote mode requires a model name".into()))?;
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            OracleError::AuthError(format!("environment variable {} is not set", cfg.api_key_env))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| OracleError::InvalidConfig(format!("http client: {e}")))?;
        Ok(RemoteOracle {
            client,
            url: completions_url(endpoint),
            model,
            api_key,
            max_retries: cfg.max_retries,
            backoff_base: cfg.backoff_base,
            gate: Semaphore::new(cfg.concurrency_limit),
        })
    }
}

fn completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

enum Transient {
    Timeout(String),
    Other(String),
}

impl EntailmentOracle for RemoteOracle {
    fn decide(&self, state: &DeciderState) -> Result<String, OracleError> {
        let prompt = render_decider_prompt(state);
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });

        let _permit = self.gate.acquire();
        let mut last = Transient::Other("no attempt made".to_string());
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(backoff_delay(self.backoff_base, attempt));
            }
            let sent = self
                .client
                .post(&self.url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match sent {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match resp.json::<ChatResponse>() {
                            Ok(parsed) => {
                                return parsed
                                    .choices
                                    .into_iter()
                                    .next()
                                    .map(|c| c.message.content)
                                    .ok_or_else(|| OracleError::Unparseable {
                                        snippet: "response carried no choices".to_string(),
                                    });
                            }
                            // A garbled envelope from a flaky gateway is
                            // worth retrying like any transient failure.
                            Err(e) => last = Transient::Other(format!("bad envelope: {e}")),
                        }
                    } else if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(OracleError::AuthError(format!("HTTP {status}")));
                    } else if status.as_u16() == 408
                        || status.as_u16() == 429
                        || status.is_server_error()
                    {
                        last = Transient::Other(format!("HTTP {status}"));
                    } else {
                        return Err(OracleError::RemoteUnavailable {
                            attempts: attempt + 1,
                            message: format!("HTTP {status}"),
                        });
                    }
                }
                Err(e) if e.is_timeout() => last = Transient::Timeout(e.to_string()),
                Err(e) => last = Transient::Other(e.to_string()),
            }
        }
        Err(match last {
            Transient::Timeout(message) => OracleError::Timeout { attempts, message },
            Transient::Other(message) => OracleError::RemoteUnavailable { attempts, message },
        })
    }
}

fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    let factor = 1u32 << (attempt - 1).min(6);
    (base * factor).min(Duration::from_secs(8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn url_completion() {
        assert_eq!(
            completions_url("http://h/v1"),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            completions_url("http://h/v1/chat/completions"),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            completions_url("http://h/v1/"),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn backoff_grows_and_caps() {
        let base = Duration::from_millis(100);
        assert_eq!(backoff_delay(base, 1), Duration::from_millis(100));
        assert_eq!(backoff_delay(base, 2), Duration::from_millis(200));
        assert_eq!(backoff_delay(base, 3), Duration::from_millis(400));
        assert!(backoff_delay(base, 30) <= Duration::from_secs(8));
    }

    /// Minimal one-connection-at-a-time HTTP server returning scripted
    /// responses, enough for the chat-completions handshake.
    fn scripted_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().expect("accept");
                let mut buf = [0u8; 8192];
                let mut seen = Vec::new();
                // Read until the end of headers, then the content-length body.
                loop {
                    let n = stream.read(&mut buf).unwrap();
                    seen.extend_from_slice(&buf[..n]);
                    if let Some(pos) = find_header_end(&seen) {
                        let headers = String::from_utf8_lossy(&seen[..pos]).to_lowercase();
                        let content_length = headers
                            .lines()
                            .find_map(|l| l.strip_prefix("content-length:"))
                            .and_then(|v| v.trim().parse::<usize>().ok())
                            .unwrap_or(0);
                        if seen.len() >= pos + 4 + content_length {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), handle)
    }

    fn find_header_end(bytes: &[u8]) -> Option<usize> {
        bytes.windows(4).position(|w| w == b"\r\n\r\n")
    }

    fn remote_for(endpoint: &str, max_retries: u32) -> RemoteOracle {
        std::env::set_var("PACEKIT_TEST_KEY", "secret");
        let cfg = OracleConfig {
            endpoint: Some(endpoint.to_string()),
            model_name: Some("decider".to_string()),
            api_key_env: "PACEKIT_TEST_KEY".to_string(),
            max_retries,
            backoff_base: Duration::from_millis(5),
            timeout: Duration::from_secs(5),
            ..OracleConfig::default()
        };
        RemoteOracle::new(&cfg).unwrap()
    }

    fn sample_state() -> DeciderState {
        DeciderState {
            problem: "p".to_string(),
            processed_thoughts: String::new(),
            covered_responses: String::new(),
            current_thought: "r1".to_string(),
            remaining_blocks: vec!["a1".to_string()],
        }
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    }

    #[test]
    fn healthy_endpoint_returns_assistant_text() {
        let (endpoint, handle) = scripted_server(vec![(200, ok_body("{\"num_blocks\": 1}"))]);
        let oracle = remote_for(&endpoint, 0);
        assert_eq!(oracle.decide(&sample_state()).unwrap(), "{\"num_blocks\": 1}");
        handle.join().unwrap();
    }

    #[test]
    fn retries_through_rate_limits() {
        let (endpoint, handle) = scripted_server(vec![
            (429, "{}".to_string()),
            (429, "{}".to_string()),
            (200, ok_body("{\"num_blocks\": 0}")),
        ]);
        let oracle = remote_for(&endpoint, 3);
        assert_eq!(oracle.decide(&sample_state()).unwrap(), "{\"num_blocks\": 0}");
        handle.join().unwrap();
    }

    #[test]
    fn exhausted_retries_report_unavailable() {
        let (endpoint, handle) = scripted_server(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let oracle = remote_for(&endpoint, 1);
        assert!(matches!(
            oracle.decide(&sample_state()),
            Err(OracleError::RemoteUnavailable { attempts: 2, .. })
        ));
        handle.join().unwrap();
    }

    #[test]
    fn auth_failures_do_not_retry() {
        let (endpoint, handle) = scripted_server(vec![(401, "{}".to_string())]);
        let oracle = remote_for(&endpoint, 5);
        assert!(matches!(
            oracle.decide(&sample_state()),
            Err(OracleError::AuthError(_))
        ));
        handle.join().unwrap();
    }

    #[test]
    fn missing_credential_is_an_auth_error() {
        let cfg = OracleConfig {
            endpoint: Some("http://127.0.0.1:1".to_string()),
            model_name: Some("m".to_string()),
            api_key_env: "PACEKIT_DEFINITELY_UNSET".to_string(),
            ..OracleConfig::default()
        };
        assert!(matches!(RemoteOracle::new(&cfg), Err(OracleError::AuthError(_))));
    }
}
