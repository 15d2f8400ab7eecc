//! Gate between model-written call strings and real effects.
//!
//! A call string reaches a handler only as an [`ApprovedCall`], which needs a
//! [`SafetyPass`] from the safety gate and a [`ParsedCall`] from
//! [`format_check`] for the very same string. Nothing is ever evaluated as
//! code; approved calls are dispatched through a table of handlers.

mod grammar;
mod registry;
mod safety;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::Serialize;

pub use grammar::{format_check, FormatError, ParsedCall};
pub use registry::{is_valid_identifier, FunctionSpec, ParamKind, ParamSpec, Registry, Value};
pub use safety::{
    is_denylisted_word, safety_check, ApprovedCall, CheckerKind, LlmChecker, RuleChecker,
    SafetyChecker, SafetyGate, SafetyPass, SafetyVerdict, Verdict, DENYLIST_SEQUENCES,
    DENYLIST_WORDS, MAX_CALL_LEN,
};

use crate::airdata::{AirQualityHistory, GeoPoint, HistoryClient, HourlyRecord};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};

#[derive(Debug, thiserror::Error)]
pub enum CodeExecError {
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format check failed: {0}")]
    Format(#[from] FormatError),
    #[error("safety check rejected the call ({:?}): {}", .0.checker(), .0.rationale())]
    Rejected(SafetyVerdict),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("no known function in selection reply {reply:?}; please clarify the request")]
    EmptySelection { reply: String },
    #[error("no handler registered for `{0}`")]
    UnknownHandler(String),
    #[error("`{call}` failed: {message}")]
    Runtime { call: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Text produced by the call-writing model. Untrusted until checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallString(String);

impl CallString {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    /// Takes a model reply, unwrapping a single fenced or backticked block
    /// when the whole reply is one.
    pub fn from_reply(reply: &str) -> Self {
        let t = reply.trim();
        if let Some(inner) = t.strip_prefix("```").and_then(|r| r.strip_suffix("```")) {
            let body = match inner.split_once('\n') {
                Some((tag, rest)) if !tag.contains('(') => rest,
                _ => inner,
            };
            return Self(body.trim().to_string());
        }
        if let Some(inner) = t.strip_prefix('`').and_then(|r| r.strip_suffix('`')) {
            if !inner.contains('`') {
                return Self(inner.trim().to_string());
            }
        }
        Self(t.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum CallOutput {
    History(AirQualityHistory),
    Current(HourlyRecord),
    Value(serde_json::Value),
}

/// Handler output tagged with the call that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallResult {
    pub call: ParsedCall,
    pub output: CallOutput,
}

#[async_trait]
pub trait FunctionHandler: Send + Sync {
    async fn call(&self, call: &ParsedCall) -> Result<CallOutput, String>;
}

/// Serves `fetch_history` and `current_conditions` from a history client.
pub struct AirDataHandler {
    client: Arc<HistoryClient>,
}

impl AirDataHandler {
    pub fn new(client: Arc<HistoryClient>) -> Self {
        Self { client }
    }
}

fn location_of(call: &ParsedCall) -> Result<GeoPoint, String> {
    let lat = call.float("lat").ok_or("missing lat")?;
    let lng = call.float("lng").ok_or("missing lng")?;
    GeoPoint::new(lat, lng).map_err(|e| e.to_string())
}

#[async_trait]
impl FunctionHandler for AirDataHandler {
    async fn call(&self, call: &ParsedCall) -> Result<CallOutput, String> {
        let location = location_of(call)?;
        match call.function.as_str() {
            "fetch_history" => {
                let hours = call.int("hours").ok_or("missing hours")?;
                let hours = u32::try_from(hours).map_err(|e| e.to_string())?;
                self.client
                    .fetch_history(location, hours)
                    .await
                    .map(CallOutput::History)
                    .map_err(|e| e.to_string())
            }
            "current_conditions" => self
                .client
                .current_conditions(location)
                .await
                .map(CallOutput::Current)
                .map_err(|e| e.to_string()),
            other => Err(format!("air-data handler cannot serve `{other}`")),
        }
    }
}

/// Table dispatch over registered handlers.
pub struct Executor {
    registry: Registry,
    handlers: BTreeMap<String, Arc<dyn FunctionHandler>>,
    dispatched: AtomicUsize,
}

impl Executor {
    pub fn new(registry: Registry) -> Self {
        Self {
            registry,
            handlers: BTreeMap::new(),
            dispatched: AtomicUsize::new(0),
        }
    }

    /// Registry plus the air-data handler for every air-data function it lists.
    pub fn with_air_data(registry: Registry, client: Arc<HistoryClient>) -> Self {
        let handler: Arc<dyn FunctionHandler> = Arc::new(AirDataHandler::new(client));
        let mut ex = Self::new(registry);
        for name in ["fetch_history", "current_conditions"] {
            if ex.registry.get(name).is_some() {
                ex.handlers.insert(name.to_string(), handler.clone());
            }
        }
        ex
    }

    pub fn register(
        mut self,
        name: &str,
        handler: Arc<dyn FunctionHandler>,
    ) -> Result<Self, CodeExecError> {
        if self.registry.get(name).is_none() {
            return Err(CodeExecError::Manifest(format!("`{name}` is not in the registry")));
        }
        self.handlers.insert(name.to_string(), handler);
        Ok(self)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Number of calls that reached a handler.
    pub fn dispatch_count(&self) -> usize {
        self.dispatched.load(Ordering::SeqCst)
    }

    pub async fn dispatch(&self, approved: ApprovedCall) -> Result<CallResult, CodeExecError> {
        let call = approved.call();
        let handler = self
            .handlers
            .get(&call.function)
            .ok_or_else(|| CodeExecError::UnknownHandler(call.function.clone()))?;
        self.dispatched.fetch_add(1, Ordering::SeqCst);
        let output = handler
            .call(call)
            .await
            .map_err(|message| CodeExecError::Runtime {
                call: call.to_string(),
                message,
            })?;
        Ok(CallResult {
            call: call.clone(),
            output,
        })
    }

    /// Safety gate, then format check, then dispatch.
    pub async fn run(&self, call: &CallString, gate: &SafetyGate) -> Result<CallResult, CodeExecError> {
        let pass = gate.approve(call).await?;
        let parsed = format_check(call, &self.registry)?;
        self.dispatch(ApprovedCall::new(pass, parsed)?).await
    }
}

/// Functions chosen by the instructor, plus names it made up.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub specs: Vec<FunctionSpec>,
    pub unknown: Vec<String>,
}

fn selection_prompt(registry: &Registry) -> String {
    let mut s = String::from(
        "Choose the functions needed for the user's request from the list below. Reply with \
         the function names only, separated by commas.\n",
    );
    for spec in registry.specs() {
        s.push_str(&format!("\n- {}: {}", spec.name, spec.doc));
    }
    s
}

pub fn parse_selection(reply: &str, registry: &Registry) -> Selection {
    let mut specs: Vec<FunctionSpec> = Vec::new();
    let mut unknown = Vec::new();
    let names = reply
        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .map(|w| w.trim_matches(|c: char| !(c.is_ascii_alphanumeric() || c == '_')))
        .filter(|w| !w.is_empty());
    for name in names {
        match registry.get(name) {
            Some(spec) if !specs.iter().any(|s| s.name == name) => specs.push(spec.clone()),
            Some(_) => {}
            None => {
                if !unknown.iter().any(|u| u == name) {
                    log::warn!("instructor selected unknown function `{name}`; dropped");
                    unknown.push(name.to_string());
                }
            }
        }
    }
    Selection { specs, unknown }
}

pub async fn select_functions(
    user_prompt: &str,
    registry: &Registry,
    gateway: &Gateway,
    model: &str,
) -> Result<Selection, CodeExecError> {
    if registry.is_empty() {
        return Err(CodeExecError::Config("registry is empty".into()));
    }
    let request = ChatRequest::new(
        model,
        vec![Message::system(selection_prompt(registry)), Message::user(user_prompt)],
    )
    .with_label("instructor/select");
    let reply = gateway.complete(&request).await?;
    let selection = parse_selection(&reply.content, registry);
    if selection.specs.is_empty() {
        return Err(CodeExecError::EmptySelection {
            reply: reply.content,
        });
    }
    Ok(selection)
}

/// Asks the call-writing model for one call to the selected functions.
pub async fn request_call(
    user_prompt: &str,
    specs: &[FunctionSpec],
    gateway: &Gateway,
    model: &str,
) -> Result<CallString, CodeExecError> {
    let request = ChatRequest::new(
        model,
        vec![
            Message::system(Registry::documentation_prompt(specs)),
            Message::user(user_prompt),
        ],
    )
    .with_label("codeexec/call");
    let reply = gateway.complete(&request).await?;
    Ok(CallString::from_reply(&reply.content))
}
