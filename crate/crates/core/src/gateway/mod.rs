//! Provider-agnostic chat completion with retries, usage capture and transcripts.

mod openai;
mod scripted;

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::cost::UsageLedger;

pub use openai::{OpenAiCompatible, Vendor};
pub use scripted::{Contains, ScriptEntry, ScriptMatch, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    /// Local bookkeeping tag (e.g. `worker/07`); never sent to providers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            messages,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("message {i} is empty")));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined by newlines.
    pub fn transcript_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Stable hash of model, temperature and messages.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update(self.temperature.to_bits().to_le_bytes());
        for m in &self.messages {
            hasher.update([m.role as u8]);
            hasher.update((m.content.len() as u64).to_le_bytes());
            hasher.update(m.content.as_bytes());
        }
        hasher.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    #[serde(default)]
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub content: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected request (status {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("no script entry matches request {0}")]
    NoScriptMatch(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transient(_) => true,
            ProviderError::Rejected { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: ProviderError },
    #[error(transparent)]
    Provider(ProviderError),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, base_delay: Duration, factor: f64) -> Result<Self, GatewayError> {
        if max_attempts == 0 {
            return Err(GatewayError::InvalidRequest("max_attempts must be >= 1".into()));
        }
        if !factor.is_finite() || factor < 1.0 {
            return Err(GatewayError::InvalidRequest("backoff factor must be >= 1".into()));
        }
        Ok(Self {
            max_attempts,
            base_delay,
            factor,
        })
    }

    /// Delay before retry `k` (1-based): `base_delay · factor^(k-1)`.
    pub fn delay_before_retry(&self, k: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(k.saturating_sub(1) as i32))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Planning estimate: one token per four characters, rounded up.
pub fn count_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Collapses runs of consecutive system messages into one, for providers
/// that accept a single system prompt.
pub fn merge_system_messages(messages: &[Message]) -> Vec<Message> {
    let mut out: Vec<Message> = Vec::with_capacity(messages.len());
    for m in messages {
        match out.last_mut() {
            Some(prev) if prev.role == Role::System && m.role == Role::System => {
                prev.content.push_str("\n\n");
                prev.content.push_str(&m.content);
            }
            _ => out.push(m.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: TokenUsage,
    pub attempts: u32,
    pub wall_ms: u64,
}

/// In-memory call log, written as JSON lines ordered by request label.
#[derive(Debug, Default)]
pub struct TranscriptLog {
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl TranscriptLog {
    pub fn push(&self, entry: TranscriptEntry) {
        self.entries.lock().expect("transcript lock").push(entry);
    }

    /// Entries sorted by label; calls sharing a label keep their call order.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let mut entries = self.entries.lock().expect("transcript lock").clone();
        entries.sort_by(|a, b| a.request.label.cmp(&b.request.label));
        entries
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript entries serialize") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

/// Chat gateway: retries, a concurrency cap, usage accounting and transcripts.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    policy: RetryPolicy,
    permits: Arc<Semaphore>,
    ledger: Arc<UsageLedger>,
    transcript: Arc<TranscriptLog>,
    frozen_clock: bool,
}

impl Gateway {
    pub const DEFAULT_CONCURRENCY: usize = 4;

    pub fn new(provider: Arc<dyn ChatProvider>, ledger: Arc<UsageLedger>) -> Self {
        Self {
            provider,
            policy: RetryPolicy::default(),
            permits: Arc::new(Semaphore::new(Self::DEFAULT_CONCURRENCY)),
            ledger,
            transcript: Arc::new(TranscriptLog::default()),
            frozen_clock: false,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.permits = Arc::new(Semaphore::new(cap.max(1)));
        self
    }

    /// Records `wall_ms = 0` so transcripts are byte-stable.
    pub fn with_frozen_clock(mut self) -> Self {
        self.frozen_clock = true;
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn transcript(&self) -> &Arc<TranscriptLog> {
        &self.transcript
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let started = Instant::now();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            match self.provider.send(request).await {
                Ok(reply) => break Ok(reply),
                Err(err) if err.is_retryable() && attempts < self.policy.max_attempts => {
                    let delay = self.policy.delay_before_retry(attempts);
                    log::debug!(
                        "{} attempt {attempts} failed ({err}); retrying in {delay:?}",
                        self.provider.name()
                    );
                    tokio::time::sleep(delay).await;
                }
                Err(err) if err.is_retryable() => {
                    break Err(GatewayError::Exhausted {
                        attempts,
                        last: err,
                    })
                }
                Err(err) => break Err(GatewayError::Provider(err)),
            }
        };
        let wall_ms = if self.frozen_clock {
            0
        } else {
            started.elapsed().as_millis() as u64
        };
        match outcome {
            Ok(reply) => {
                self.ledger.record_llm(&request.model, &reply.usage);
                self.transcript.push(TranscriptEntry {
                    request: request.clone(),
                    response: Some(reply.content.clone()),
                    error: None,
                    usage: reply.usage,
                    attempts,
                    wall_ms,
                });
                Ok(ChatResponse {
                    content: reply.content,
                    usage: reply.usage,
                    attempts,
                })
            }
            Err(err) => {
                self.transcript.push(TranscriptEntry {
                    request: request.clone(),
                    response: None,
                    error: Some(err.to_string()),
                    usage: TokenUsage::default(),
                    attempts,
                    wall_ms,
                });
                Err(err)
            }
        }
    }
}
