//! Chat-completion transport with token accounting.
//!
//! Two backends implement [`LlmClient`]: an HTTP client speaking the usual
//! single-turn chat-completion wire format (with bounded exponential
//! backoff on transient failures), and a deterministic scripted stub for
//! tests. Stub scripts are ordinary data and can live in fixture files; an
//! unmatched prompt is a hard error, never a silent default.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            model: "default".to_string(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResponse {
    pub completion: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    /// Wall-clock time of the call; zero for the stub. Kept out of any
    /// serialized record so exports stay byte-stable across runs.
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no stub rule matches call #{index}, prompt starting `{prompt_prefix}`")]
    StubMismatch { prompt_prefix: String, index: usize },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
}

/// Immutable after construction and safe to share across episodes.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

/// Deterministic approximate token count: whitespace-delimited chunks,
/// standalone punctuation included. Backends that report exact usage take
/// precedence over this.
pub fn count_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

// ---------------------------------------------------------------------------
// Scripted stub
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMatcher {
    /// Matches when the prompt contains this text.
    Substring(String),
    /// Matches the n-th `complete` call (0-based) regardless of prompt.
    Index(usize),
    /// Matches every call. Useful as a final catch-all rule.
    Any,
}

impl StubMatcher {
    fn matches(&self, prompt: &str, index: usize) -> bool {
        match self {
            StubMatcher::Substring(s) => prompt.contains(s.as_str()),
            StubMatcher::Index(i) => *i == index,
            StubMatcher::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    pub matcher: StubMatcher,
    pub completion: String,
}

/// An ordered rule list; the first matching rule wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubScript {
    pub rules: Vec<StubRule>,
}

impl StubScript {
    pub fn new(rules: Vec<StubRule>) -> Self {
        Self { rules }
    }

    pub fn substring(pattern: impl Into<String>, completion: impl Into<String>) -> StubRule {
        StubRule {
            matcher: StubMatcher::Substring(pattern.into()),
            completion: completion.into(),
        }
    }

    pub fn index(i: usize, completion: impl Into<String>) -> StubRule {
        StubRule {
            matcher: StubMatcher::Index(i),
            completion: completion.into(),
        }
    }

    pub fn any_completion(completion: impl Into<String>) -> StubRule {
        StubRule {
            matcher: StubMatcher::Any,
            completion: completion.into(),
        }
    }
}

/// One stub instance per episode: the call counter is internal, so episodes
/// with sequence-indexed rules stay independent.
#[derive(Debug)]
pub struct StubClient {
    script: StubScript,
    calls: AtomicUsize,
}

impl StubClient {
    pub fn new(script: StubScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls_made(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for StubClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.matcher.matches(&request.prompt, index))
            .ok_or_else(|| LlmError::StubMismatch {
                prompt_prefix: request.prompt.chars().take(80).collect(),
                index,
            })?;
        Ok(CompletionResponse {
            completion: rule.completion.clone(),
            prompt_tokens: count_tokens(&request.prompt),
            completion_tokens: count_tokens(&rule.completion),
            latency: Duration::ZERO,
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token. The value itself
    /// never appears in specs or logs.
    pub api_key_env: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8080/v1/chat/completions".to_string(),
            model: "default".to_string(),
            api_key_env: "LLM_API_KEY".to_string(),
            max_retries: 3,
            initial_backoff_ms: 200,
        }
    }
}

pub struct HttpClient {
    config: HttpConfig,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u32>,
    #[serde(default)]
    completion_tokens: Option<u32>,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { config, http })
    }

    fn send_once(&self, request: &CompletionRequest) -> Result<reqwest::blocking::Response, String> {
        let body = WireRequest {
            model: &self.config.model,
            messages: [WireMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.http.post(&self.config.endpoint).json(&body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            builder = builder.bearer_auth(key);
        }
        builder.send().map_err(|e| e.to_string())
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let started = std::time::Instant::now();
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let attempts_allowed = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts_allowed {
            match self.send_once(request) {
                Ok(response) if response.status().is_success() => {
                    let parsed: WireResponse = response
                        .json()
                        .map_err(|e| LlmError::Malformed(e.to_string()))?;
                    let choice = parsed
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| LlmError::Malformed("no choices".to_string()))?;
                    let completion = choice.message.content;
                    let usage = parsed.usage.unwrap_or(WireUsage {
                        prompt_tokens: None,
                        completion_tokens: None,
                    });
                    // Exact backend usage beats the local approximation.
                    return Ok(CompletionResponse {
                        prompt_tokens: usage
                            .prompt_tokens
                            .unwrap_or_else(|| count_tokens(&request.prompt)),
                        completion_tokens: usage
                            .completion_tokens
                            .unwrap_or_else(|| count_tokens(&completion)),
                        completion,
                        latency: started.elapsed(),
                    });
                }
                Ok(response) => {
                    let status = response.status();
                    last_error = format!("status {status}");
                    let transient = status.as_u16() == 429 || status.is_server_error();
                    if !transient {
                        return Err(LlmError::Transport {
                            attempts: attempt,
                            message: last_error,
                        });
                    }
                    log::warn!(
                        "llm endpoint returned {status}, attempt {attempt}/{attempts_allowed}"
                    );
                }
                Err(message) => {
                    last_error = message;
                    log::warn!(
                        "llm transport error ({last_error}), attempt {attempt}/{attempts_allowed}"
                    );
                }
            }
            if attempt < attempts_allowed {
                std::thread::sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
        }
        Err(LlmError::Transport {
            attempts: attempts_allowed,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counting_follows_the_whitespace_rule() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("pour red paint into wood cup"), 6);
        assert_eq!(count_tokens("  spaced   out  "), 2);
    }

    #[test]
    fn stub_matches_substrings_in_rule_order() {
        let script = StubScript::new(vec![
            StubScript::substring("Answer 1:", "planning reply"),
            StubScript::substring("actions", "TELEPORT(kitchen)"),
        ]);
        let client = StubClient::new(script);
        let r = client
            .complete(&CompletionRequest::new("please write Answer 1: here"))
            .unwrap();
        assert_eq!(r.completion, "planning reply");
        let r = client
            .complete(&CompletionRequest::new("emit the actions now"))
            .unwrap();
        assert_eq!(r.completion, "TELEPORT(kitchen)");
    }

    #[test]
    fn stub_sequence_rules_follow_the_call_counter() {
        let script = StubScript::new(vec![
            StubScript::index(0, "first"),
            StubScript::index(1, "second"),
        ]);
        let client = StubClient::new(script);
        assert_eq!(
            client.complete(&CompletionRequest::new("x")).unwrap().completion,
            "first"
        );
        assert_eq!(
            client.complete(&CompletionRequest::new("x")).unwrap().completion,
            "second"
        );
        let err = client.complete(&CompletionRequest::new("x")).unwrap_err();
        assert!(matches!(err, LlmError::StubMismatch { index: 2, .. }));
    }

    #[test]
    fn stub_counts_tokens_with_the_shared_counter() {
        let script = StubScript::new(vec![StubScript::substring("p", "a b c")]);
        let client = StubClient::new(script);
        let r = client
            .complete(&CompletionRequest::new("prompt with four tokens"))
            .unwrap();
        assert_eq!(r.prompt_tokens, 4);
        assert_eq!(r.completion_tokens, 3);
        assert_eq!(r.latency, Duration::ZERO);
    }

    #[test]
    fn identical_scripts_give_identical_response_sequences() {
        let script = StubScript::new(vec![
            StubScript::index(0, "a"),
            StubScript::any_completion("b"),
        ]);
        let run = |script: StubScript| -> Vec<String> {
            let client = StubClient::new(script);
            (0..3)
                .map(|_| {
                    client
                        .complete(&CompletionRequest::new("x"))
                        .unwrap()
                        .completion
                })
                .collect()
        };
        assert_eq!(run(script.clone()), run(script));
    }
}
