use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{
    merge_system_messages, ChatProvider, ChatRequest, ProviderError, ProviderReply, TokenUsage,
};

/// Vendors reachable through the chat-completions wire shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vendor {
    OpenAi,
    DeepSeek,
}

impl Vendor {
    fn key_env(self) -> &'static str {
        match self {
            Vendor::OpenAi => "OPENAI_API_KEY",
            Vendor::DeepSeek => "DEEPSEEK_API_KEY",
        }
    }

    fn url_env(self) -> &'static str {
        match self {
            Vendor::OpenAi => "OPENAI_BASE_URL",
            Vendor::DeepSeek => "DEEPSEEK_BASE_URL",
        }
    }

    fn default_url(self) -> &'static str {
        match self {
            Vendor::OpenAi => "https://api.openai.com/v1",
            Vendor::DeepSeek => "https://api.deepseek.com/v1",
        }
    }

    /// Picks the vendor serving a model id.
    pub fn for_model(model: &str) -> Vendor {
        if model.to_ascii_lowercase().starts_with("deepseek") {
            Vendor::DeepSeek
        } else {
            Vendor::OpenAi
        }
    }
}

pub struct OpenAiCompatible {
    http: reqwest::Client,
    base_url: String,
    api_key: String,
    merge_system: bool,
    name: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    prompt_tokens_details: Option<WirePromptDetails>,
    /// DeepSeek reports cache hits at the top level.
    #[serde(default)]
    prompt_cache_hit_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WirePromptDetails {
    #[serde(default)]
    cached_tokens: u64,
}

fn is_reasoning_model(model: &str) -> bool {
    let m = model.to_ascii_lowercase();
    ["o1", "o3", "o4"].iter().any(|p| m.starts_with(p))
}

impl OpenAiCompatible {
    pub fn new(vendor: Vendor, base_url: &str, api_key: &str) -> Result<Self, ProviderError> {
        crate::airdata::install_tls_provider();
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(300))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            merge_system: vendor == Vendor::DeepSeek,
            name: format!("{vendor:?}").to_ascii_lowercase(),
        })
    }

    pub fn from_env(vendor: Vendor) -> Result<Self, ProviderError> {
        let key = std::env::var(vendor.key_env())
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::Config(format!("{} is not set", vendor.key_env())))?;
        let url = std::env::var(vendor.url_env())
            .ok()
            .filter(|u| !u.is_empty())
            .unwrap_or_else(|| vendor.default_url().to_string());
        Self::new(vendor, &url, &key)
    }

    /// Request body in the chat-completions shape.
    pub fn wire_body(&self, request: &ChatRequest) -> serde_json::Value {
        let messages = if self.merge_system {
            merge_system_messages(&request.messages)
        } else {
            request.messages.clone()
        };
        let mut body = json!({ "model": request.model, "messages": messages });
        if !is_reasoning_model(&request.model) {
            body["temperature"] = json!(request.temperature);
        }
        body
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&self.wire_body(request))
            .send()
            .await
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Rejected {
                status: status.as_u16(),
                message: text,
            });
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transient(format!("malformed response: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| ProviderError::Transient("empty completion".into()))?;
        let usage = wire
            .usage
            .map(|u| TokenUsage {
                input_tokens: u.prompt_tokens,
                cached_input_tokens: u
                    .prompt_cache_hit_tokens
                    .or(u.prompt_tokens_details.map(|d| d.cached_tokens))
                    .unwrap_or(0),
                output_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ProviderReply { content, usage })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Message, RetryPolicy};
    use crate::cost::UsageLedger;
    use axum::{extract::State, http::StatusCode, routing::post, Json, Router};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Stub {
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    }

    async fn completions(
        State(stub): State<Stub>,
        Json(body): Json<serde_json::Value>,
    ) -> (StatusCode, Json<serde_json::Value>) {
        let n = stub.hits.fetch_add(1, Ordering::SeqCst);
        stub.bodies.lock().unwrap().push(body);
        if n == 0 {
            return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
        }
        (
            StatusCode::OK,
            Json(json!({
                "choices": [{"message": {"role": "assistant", "content": "summary"}}],
                "usage": {"prompt_tokens": 120, "completion_tokens": 30, "prompt_cache_hit_tokens": 64}
            })),
        )
    }

    #[tokio::test]
    async fn round_trip_against_stub_server() {
        let stub = Stub::default();
        let app = Router::new()
            .route("/v1/chat/completions", post(completions))
            .with_state(stub.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

        let provider = OpenAiCompatible::new(Vendor::DeepSeek, &format!("http://{addr}/v1"), "k").unwrap();
        let gw = Gateway::new(Arc::new(provider), Arc::new(UsageLedger::new())).with_policy(
            RetryPolicy::new(3, std::time::Duration::from_millis(1), 1.0).unwrap(),
        );
        let req = ChatRequest::new(
            "deepseek-v3",
            vec![Message::system("a"), Message::system("b"), Message::user("q")],
        );
        let resp = gw.complete(&req).await.unwrap();
        assert_eq!(resp.content, "summary");
        assert_eq!(resp.attempts, 2);
        assert_eq!(resp.usage.cached_input_tokens, 64);
        let bodies = stub.bodies.lock().unwrap();
        let msgs = bodies[1]["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 2, "system prompts merged for this vendor");
        assert_eq!(bodies[1]["temperature"], json!(0.0));
    }

    #[test]
    fn reasoning_models_omit_temperature() {
        let p = OpenAiCompatible::new(Vendor::OpenAi, "http://localhost", "k").unwrap();
        let body = p.wire_body(&ChatRequest::new("o3", vec![Message::system("a"), Message::system("b")]));
        assert!(body.get("temperature").is_none());
        assert_eq!(body["messages"].as_array().unwrap().len(), 2);
        assert_eq!(Vendor::for_model("deepseek-v3"), Vendor::DeepSeek);
        assert_eq!(Vendor::for_model("gpt41"), Vendor::OpenAi);
    }
}
