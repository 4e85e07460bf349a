//! HTTP chat-completions backend.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{BackendKind, BackendReply, CallKey, CompletionBackend, CompletionRequest, LlmError, TokenUsage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth header.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Delay before each retry; its length is the retry count.
    #[serde(default = "default_backoff")]
    pub backoff_ms: Vec<u64>,
}

fn default_timeout() -> u64 {
    600
}

fn default_backoff() -> Vec<u64> {
    vec![1_000, 4_000, 16_000]
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug)]
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        if config.endpoint.trim().is_empty() || config.model.trim().is_empty() {
            return Err(LlmError::Config("live backend needs an endpoint and a model".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            api_key,
        })
    }

    fn attempt(&self, body: &Value) -> Result<BackendReply, Failure> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(Failure::Retryable(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => return Err(Failure::Fatal(format!("HTTP {code}"))),
            Err(e) => return Err(Failure::Retryable(e.to_string())),
        };
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Retryable(format!("bad response body: {e}")))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = v.get("usage").map(|u| {
            let prompt = u["prompt_tokens"].as_u64().unwrap_or(0);
            let cached = u["prompt_tokens_details"]["cached_tokens"].as_u64().unwrap_or(0);
            TokenUsage {
                uncached_prompt: prompt.saturating_sub(cached),
                cached_prompt: cached,
                completion: u["completion_tokens"].as_u64().unwrap_or(0),
                cost: 0.0,
            }
        });
        Ok(BackendReply { text, usage })
    }
}

impl CompletionBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, req: &CompletionRequest, _key: &CallKey) -> Result<BackendReply, LlmError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(m)) => return Err(LlmError::Rejected(m)),
                Err(Failure::Retryable(m)) => {
                    let Some(delay) = self.config.backoff_ms.get(attempts as usize - 1) else {
                        return Err(LlmError::Transport {
                            attempts,
                            message: m,
                        });
                    };
                    warn!(attempt = attempts, error = %m, "completion failed; retrying");
                    thread::sleep(Duration::from_millis(*delay));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs, one per connection.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let h = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, h)
    }

    fn ok_body(text: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 3, "prompt_tokens_details": {"cached_tokens": 4}}
        })
        .to_string()
    }

    fn backend(url: String) -> LiveBackend {
        let mut c = LiveConfig::new(url, "test-model");
        c.backoff_ms = vec![1, 1, 1];
        c.timeout_secs = 10;
        LiveBackend::new(c).unwrap()
    }

    fn key() -> CallKey {
        CallKey {
            channel: "c".into(),
            seq: 0,
        }
    }

    #[test]
    fn parses_reply_and_usage() {
        let (url, h) = serve(vec![(200, ok_body("hello"))]);
        let r = backend(url)
            .complete(&CompletionRequest::new(Role::Coder, "c", "hi"), &key())
            .unwrap();
        assert_eq!(r.text, "hello");
        let u = r.usage.unwrap();
        assert_eq!((u.uncached_prompt, u.cached_prompt, u.completion), (6, 4, 3));
        let sent = h.join().unwrap();
        let sent: Value = serde_json::from_str(&sent[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, h) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, ok_body("ok"))]);
        let r = backend(url)
            .complete(&CompletionRequest::new(Role::Coder, "c", "hi"), &key())
            .unwrap();
        assert_eq!(r.text, "ok");
        assert_eq!(h.join().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, h) = serve(vec![(503, "{}".into()); 4]);
        let e = backend(url)
            .complete(&CompletionRequest::new(Role::Coder, "c", "hi"), &key())
            .unwrap_err();
        assert!(matches!(e, LlmError::Transport { attempts: 4, .. }), "{e}");
        h.join().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(400, "{}".into())]);
        let e = backend(url)
            .complete(&CompletionRequest::new(Role::Coder, "c", "hi"), &key())
            .unwrap_err();
        assert!(matches!(e, LlmError::Rejected(_)));
        h.join().unwrap();
    }
}
