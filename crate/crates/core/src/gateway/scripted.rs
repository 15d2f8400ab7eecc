//! Deterministic replay provider driven by a script file.
//!
//! Script format: a JSON list of entries
//! `{"match": {"model"?, "contains"?}, "response"? | "error"?, "usage"?, "times"?, "delay_ms"?}`.
//! The first entry whose matcher accepts the request wins. `contains` is a
//! string or a list of strings that must all appear in the concatenated
//! message text. An entry with `times: n` is skipped once it has served `n`
//! requests. Matching depends only on request content, so concurrent
//! completion order cannot change which entry answers.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{count_tokens, ChatProvider, ChatRequest, ProviderError, ProviderReply, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Contains {
    One(String),
    All(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<Contains>,
}

impl ScriptMatch {
    fn accepts(&self, request: &ChatRequest, text: &str) -> bool {
        if let Some(model) = &self.model {
            if model != &request.model {
                return false;
            }
        }
        match &self.contains {
            None => true,
            Some(Contains::One(s)) => text.contains(s.as_str()),
            Some(Contains::All(all)) => all.iter().all(|s| text.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: ScriptMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl ScriptEntry {
    pub fn reply(contains: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch {
                model: None,
                contains: Some(Contains::One(contains.into())),
            },
            response: Some(response.into()),
            ..Default::default()
        }
    }
}

pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
    served: Mutex<Vec<u32>>,
    calls: AtomicUsize,
    jitter: Option<(u64, u64)>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, ProviderError> {
        for (i, e) in entries.iter().enumerate() {
            if e.response.is_some() == e.error.is_some() {
                return Err(ProviderError::Config(format!(
                    "script entry {i} must have exactly one of `response` or `error`"
                )));
            }
        }
        Ok(Self {
            served: Mutex::new(vec![0; entries.len()]),
            entries,
            calls: AtomicUsize::new(0),
            jitter: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| ProviderError::Config(format!("script: {e}")))?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Adds a pseudo-random latency in `0..max_ms` derived from the seed and
    /// the request fingerprint, to shuffle completion order reproducibly.
    pub fn with_jitter(mut self, seed: u64, max_ms: u64) -> Self {
        self.jitter = Some((seed, max_ms.max(1)));
        self
    }

    /// Number of requests received, including failed ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn jitter_for(&self, request: &ChatRequest) -> Option<Duration> {
        let (seed, max_ms) = self.jitter?;
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(request.fingerprint().as_bytes());
        let bytes: [u8; 8] = h.finalize()[..8].try_into().expect("8 bytes");
        Some(Duration::from_millis(u64::from_le_bytes(bytes) % max_ms))
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = request.transcript_text();
        let picked = {
            let mut served = self.served.lock().expect("script lock");
            let found = self.entries.iter().enumerate().find(|(i, e)| {
                e.times.is_none_or(|t| served[*i] < t) && e.matcher.accepts(request, &text)
            });
            found.map(|(i, e)| {
                served[i] += 1;
                e.clone()
            })
        };
        let entry = picked.ok_or_else(|| ProviderError::NoScriptMatch(request.fingerprint()))?;
        let delay = entry
            .delay_ms
            .map(Duration::from_millis)
            .into_iter()
            .chain(self.jitter_for(request))
            .sum::<Duration>();
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        if let Some(err) = entry.error {
            return Err(ProviderError::Transient(err));
        }
        let content = entry.response.expect("validated in new");
        let usage = entry.usage.unwrap_or(TokenUsage {
            input_tokens: count_tokens(&text),
            cached_input_tokens: 0,
            output_tokens: count_tokens(&content),
        });
        Ok(ProviderReply { content, usage })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
