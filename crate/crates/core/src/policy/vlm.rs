//! Chat-completions client for vision-language models, with a pluggable
//! transport so the same code path runs against a scripted responder.

use super::{parse_confirmation, parse_decision, ConfirmResult, Decision, PolicyError};
use crate::prompting::{ConfirmationPrompt, ContentPart, DecisionPrompt};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteVlmConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub temperature: f64,
    /// Remote requests in flight across the whole process.
    pub max_concurrent: usize,
}

impl Default for RemoteVlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".to_string(),
            model: "gpt-4o".to_string(),
            token_env: "POINAV_VLM_TOKEN".to_string(),
            timeout_secs: 30.0,
            max_retries: 2,
            temperature: 0.0,
            max_concurrent: 4,
        }
    }
}

impl RemoteVlmConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(PolicyError::Fatal(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_concurrent == 0 {
            return Err(PolicyError::Fatal("max_concurrent must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn user(model: &str, temperature: f64, content: Vec<ContentPart>) -> Self {
        Self {
            model: model.to_string(),
            temperature,
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content,
            }],
        }
    }

    /// Concatenated text parts of all messages.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            for part in &m.content {
                if let ContentPart::Text { text } = part {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(text);
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl TransportError {
    pub fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Protocol(_) => false,
        }
    }
}

/// Sends one chat request and returns the reply text.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &str) -> Result<String, TransportError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| TransportError::Protocol(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
}

static IN_FLIGHT: Mutex<usize> = Mutex::new(0);
static SLOT_FREED: Condvar = Condvar::new();

/// Process-wide slot for one remote request; released on drop.
struct Slot;

impl Slot {
    fn acquire(limit: usize) -> Slot {
        let mut n = IN_FLIGHT.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= limit {
            n = SLOT_FREED.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Slot
    }
}

impl Drop for Slot {
    fn drop(&mut self) {
        *IN_FLIGHT.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        SLOT_FREED.notify_all();
    }
}

/// Blocking HTTP transport. A request waits while `max_concurrent` requests
/// from any transport in the process are in flight.
pub struct HttpTransport {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    max_concurrent: usize,
}

impl HttpTransport {
    /// Reads the token from the configured environment variable, if set.
    pub fn new(cfg: &RemoteVlmConfig) -> Self {
        Self::with_token(cfg, std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty()))
    }

    pub fn with_token(cfg: &RemoteVlmConfig, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/')),
            token,
            agent,
            max_concurrent: cfg.max_concurrent.max(1),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let _slot = Slot::acquire(self.max_concurrent);
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = serde_json::to_vec(request).map_err(|e| TransportError::Protocol(e.to_string()))?;
        let mut resp = req.send(&body[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        let code = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        extract_content(&text)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Regex matched against the request's text.
    pub pattern: String,
    pub reply: String,
}

/// Rule table of a scripted responder, as stored in JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptFile {
    pub rules: Vec<ScriptRule>,
    pub default: String,
}

/// Deterministic in-process stand-in for a chat model: the first rule whose
/// pattern matches the request text supplies the reply.
#[derive(Clone, Debug)]
pub struct ScriptedResponder {
    rules: Vec<(Regex, String)>,
    default: String,
}

impl ScriptedResponder {
    pub fn new(script: &ScriptFile) -> Result<Self, regex::Error> {
        let rules = script
            .rules
            .iter()
            .map(|r| Ok((Regex::new(&r.pattern)?, r.reply.clone())))
            .collect::<Result<_, regex::Error>>()?;
        Ok(Self {
            rules,
            default: script.default.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let script: ScriptFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::new(&script).map_err(|e| e.to_string())
    }

    /// Chooses candidate 1 for decisions and answers "unsure" to confirmations.
    pub fn builtin() -> Self {
        Self::new(&ScriptFile {
            rules: vec![ScriptRule {
                pattern: r"(?i)answer yes, no, or unsure".into(),
                reply: "unsure".into(),
            }],
            default: "ANSWER: 1".into(),
        })
        .expect("builtin patterns compile")
    }

    pub fn reply_for(&self, text: &str) -> String {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(text))
            .map_or_else(|| self.default.clone(), |(_, r)| r.clone())
    }
}

impl Transport for ScriptedResponder {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        Ok(self.reply_for(&request.text()))
    }
}

/// Chat client with bounded retries. At most `max_retries + 1` attempts are
/// made per request, each limited by the transport's timeout.
pub struct VlmClient {
    cfg: RemoteVlmConfig,
    transport: Arc<dyn Transport>,
    calls: AtomicU32,
}

impl VlmClient {
    pub fn new(cfg: RemoteVlmConfig, transport: Arc<dyn Transport>) -> Result<Self, PolicyError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            transport,
            calls: AtomicU32::new(0),
        })
    }

    pub fn http(cfg: RemoteVlmConfig) -> Result<Self, PolicyError> {
        let t = Arc::new(HttpTransport::new(&cfg));
        Self::new(cfg, t)
    }

    pub fn scripted(responder: ScriptedResponder) -> Self {
        Self::new(RemoteVlmConfig::default(), Arc::new(responder)).expect("default config is valid")
    }

    pub fn config(&self) -> &RemoteVlmConfig {
        &self.cfg
    }

    /// Attempts made so far, including retries.
    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Reply text, `None` when every attempt failed or the reply was
    /// malformed; client errors (4xx other than 429) are fatal.
    pub fn complete(&self, content: Vec<ContentPart>) -> Result<Option<String>, PolicyError> {
        let req = ChatRequest::user(&self.cfg.model, self.cfg.temperature, content);
        for _ in 0..=self.cfg.max_retries {
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.transport.send(&req) {
                Ok(text) => return Ok(Some(text)),
                Err(e) if e.retryable() => continue,
                Err(TransportError::Status { code, body }) => {
                    return Err(PolicyError::Fatal(format!("HTTP {code}: {body}")))
                }
                Err(_) => return Ok(None),
            }
        }
        Ok(None)
    }

    pub fn decide(&self, prompt: &DecisionPrompt) -> Result<Decision, PolicyError> {
        Ok(self
            .complete(prompt.content())?
            .map_or(Decision::Uncertain, |t| parse_decision(&t, prompt.n_choices)))
    }

    pub fn confirm(&self, prompt: &ConfirmationPrompt) -> ConfirmResult {
        match self.complete(prompt.content()) {
            Ok(Some(text)) => parse_confirmation(&text),
            _ => ConfirmResult::Unsure,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        script: Mutex<Vec<Result<String, TransportError>>>,
    }

    impl Transport for Flaky {
        fn send(&self, _: &ChatRequest) -> Result<String, TransportError> {
            let mut s = self.script.lock().unwrap();
            if s.is_empty() {
                Err(TransportError::Timeout)
            } else {
                s.remove(0)
            }
        }
    }

    fn client(script: Vec<Result<String, TransportError>>, retries: u32) -> VlmClient {
        let cfg = RemoteVlmConfig {
            max_retries: retries,
            ..Default::default()
        };
        VlmClient::new(
            cfg,
            Arc::new(Flaky {
                script: Mutex::new(script),
            }),
        )
        .unwrap()
    }

    #[test]
    fn retries_then_succeeds() {
        let c = client(vec![Err(TransportError::Timeout), Ok("ok".into())], 2);
        assert_eq!(c.complete(vec![]).unwrap(), Some("ok".into()));
        assert_eq!(c.calls(), 2);
    }

    #[test]
    fn exhaustion_returns_none() {
        let c = client(vec![], 2);
        assert_eq!(c.complete(vec![]).unwrap(), None);
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn client_errors_are_fatal() {
        let c = client(
            vec![Err(TransportError::Status {
                code: 401,
                body: "bad token".into(),
            })],
            2,
        );
        assert!(matches!(c.complete(vec![]), Err(PolicyError::Fatal(_))));
        assert_eq!(c.calls(), 1);
    }

    #[test]
    fn server_errors_retry() {
        let c = client(
            vec![
                Err(TransportError::Status {
                    code: 503,
                    body: String::new(),
                }),
                Ok("fine".into()),
            ],
            1,
        );
        assert_eq!(c.complete(vec![]).unwrap(), Some("fine".into()));
    }

    #[test]
    fn zero_timeout_rejected() {
        let cfg = RemoteVlmConfig {
            timeout_secs: 0.0,
            ..Default::default()
        };
        assert!(VlmClient::new(cfg, Arc::new(ScriptedResponder::builtin())).is_err());
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"ANSWER: 2"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "ANSWER: 2");
        assert!(matches!(extract_content("{}"), Err(TransportError::Protocol(_))));
    }

    #[test]
    fn scripted_rules_in_order() {
        let r = ScriptedResponder::from_json(
            r#"{"rules": [{"pattern": "object 2\\b", "reply": "No"}, {"pattern": "object", "reply": "Yes"}], "default": "ANSWER: 1"}"#,
        )
        .unwrap();
        assert_eq!(r.reply_for("object 2"), "No");
        assert_eq!(r.reply_for("object 3"), "Yes");
        assert_eq!(r.reply_for("pick one"), "ANSWER: 1");
    }
}
