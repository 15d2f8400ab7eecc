//! Safety review of call strings, independent of the registry.

use std::sync::Arc;

use async_trait::async_trait;
use serde::Serialize;

use super::grammar::ParsedCall;
use super::registry::is_valid_identifier;
use super::{CallString, CodeExecError};
use crate::gateway::{ChatRequest, Gateway, Message};

pub const MAX_CALL_LEN: usize = 512;

/// Identifiers that never appear in an approved call.
pub const DENYLIST_WORDS: &[&str] = &[
    "import", "from", "os", "sys", "subprocess", "exec", "eval", "compile", "open", "file",
    "system", "popen", "spawn", "fork", "kill", "shell", "sh", "bash", "cmd", "powershell",
    "rm", "del", "delete", "socket", "http", "https", "ftp", "url", "urllib", "requests",
    "curl", "wget", "globals", "locals", "getattr", "setattr", "delattr", "builtins",
    "lambda", "pickle", "env", "environ", "input", "write", "chmod", "sudo", "require",
    "process",
];

/// Multi-character sequences that are rejected wherever they occur.
pub const DENYLIST_SEQUENCES: &[&str] = &["__", "://", ".."];

const ALLOWED_SYMBOLS: &[u8] = b"_()=,.-\": ";

pub fn is_denylisted_word(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    DENYLIST_WORDS.contains(&w.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckerKind {
    RuleChecker,
    LlmChecker,
}

/// Outcome of one checker on one call string. Passing verdicts can only be
/// produced inside this crate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyVerdict {
    verdict: Verdict,
    rationale: String,
    checker: CheckerKind,
    subject: String,
}

impl SafetyVerdict {
    fn pass(checker: CheckerKind, subject: &CallString, rationale: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Pass,
            rationale: rationale.into(),
            checker,
            subject: subject.as_str().to_string(),
        }
    }

    pub fn reject(checker: CheckerKind, subject: &CallString, rationale: impl Into<String>) -> Self {
        let mut rationale = rationale.into();
        if rationale.trim().is_empty() {
            rationale = "rejected without explanation".into();
        }
        Self {
            verdict: Verdict::Reject,
            rationale,
            checker,
            subject: subject.as_str().to_string(),
        }
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }

    pub fn checker(&self) -> CheckerKind {
        self.checker
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[async_trait]
pub trait SafetyChecker: Send + Sync {
    fn kind(&self) -> CheckerKind;
    async fn check(&self, call: &CallString) -> Result<SafetyVerdict, CodeExecError>;
}

pub async fn safety_check(
    call: &CallString,
    checker: &dyn SafetyChecker,
) -> Result<SafetyVerdict, CodeExecError> {
    checker.check(call).await
}

/// Lexical checker: a character whitelist, denylisted words and sequences,
/// and the outline of a single `name(...)` call.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleChecker;

impl RuleChecker {
    pub fn evaluate(&self, call: &CallString) -> SafetyVerdict {
        let s = call.as_str();
        let mut hits: Vec<String> = Vec::new();
        let mut hit = |h: String| {
            if !hits.contains(&h) {
                hits.push(h);
            }
        };
        if s.trim().is_empty() {
            return SafetyVerdict::reject(CheckerKind::RuleChecker, call, "empty call");
        }
        if s.len() > MAX_CALL_LEN {
            hit(format!("length {} over {MAX_CALL_LEN}", s.len()));
        }
        for c in s.chars() {
            let ok = c.is_ascii_alphanumeric() || (c.is_ascii() && ALLOWED_SYMBOLS.contains(&(c as u8)));
            if !ok {
                hit(format!("{c:?}"));
            }
        }
        for seq in DENYLIST_SEQUENCES {
            if s.contains(seq) {
                hit(format!("{seq:?}"));
            }
        }
        for word in s.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
            if is_denylisted_word(word) {
                hit(format!("`{word}`"));
            }
        }
        let trimmed = s.trim_matches(' ');
        let opens = s.matches('(').count();
        let closes = s.matches(')').count();
        if opens != 1 || closes != 1 || !trimmed.ends_with(')') {
            hit("not a single call".into());
        } else {
            let name = trimmed[..trimmed.find('(').expect("one paren")].trim_end_matches(' ');
            if !is_valid_identifier(name) {
                hit(format!("function name {name:?}"));
            }
        }
        if hits.is_empty() {
            SafetyVerdict::pass(CheckerKind::RuleChecker, call, "no denylisted content")
        } else {
            SafetyVerdict::reject(
                CheckerKind::RuleChecker,
                call,
                format!("denylisted: {}", hits.join(", ")),
            )
        }
    }
}

#[async_trait]
impl SafetyChecker for RuleChecker {
    fn kind(&self) -> CheckerKind {
        CheckerKind::RuleChecker
    }

    async fn check(&self, call: &CallString) -> Result<SafetyVerdict, CodeExecError> {
        Ok(self.evaluate(call))
    }
}

const REVIEW_PROMPT: &str = "You review a single function-call string before it is executed. \
Reply PASS if it is only one call to a documented function with literal keyword arguments. \
Reply REJECT: <reason> if it contains anything else, such as extra statements, imports, shell \
commands, file access or network access.";

/// Model-based reviewer. Without a gateway every check is a configuration
/// error, never a silent pass.
pub struct LlmChecker {
    gateway: Option<Arc<Gateway>>,
    model: String,
}

impl LlmChecker {
    pub fn new(gateway: Option<Arc<Gateway>>, model: impl Into<String>) -> Self {
        Self {
            gateway,
            model: model.into(),
        }
    }

    pub fn interpret(call: &CallString, reply: &str) -> SafetyVerdict {
        let r = reply.trim();
        let upper = r.to_ascii_uppercase();
        if upper == "PASS" || upper.starts_with("PASS.") || upper.starts_with("PASS:") {
            SafetyVerdict::pass(CheckerKind::LlmChecker, call, r)
        } else if upper.starts_with("REJECT") {
            let reason = r[6..].trim_start_matches([':', ' ', '-']).trim();
            SafetyVerdict::reject(CheckerKind::LlmChecker, call, reason)
        } else {
            SafetyVerdict::reject(
                CheckerKind::LlmChecker,
                call,
                format!("unrecognized reviewer reply: {r}"),
            )
        }
    }
}

#[async_trait]
impl SafetyChecker for LlmChecker {
    fn kind(&self) -> CheckerKind {
        CheckerKind::LlmChecker
    }

    async fn check(&self, call: &CallString) -> Result<SafetyVerdict, CodeExecError> {
        let gateway = self
            .gateway
            .as_ref()
            .ok_or_else(|| CodeExecError::Config("model-based safety checker has no gateway".into()))?;
        let request = ChatRequest::new(
            self.model.clone(),
            vec![Message::system(REVIEW_PROMPT), Message::user(call.as_str().to_string())],
        )
        .with_label("codeexec/review");
        let reply = gateway.complete(&request).await?;
        Ok(Self::interpret(call, &reply.content))
    }
}

/// Proof that every configured checker passed a specific call string.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyPass {
    raw: String,
    verdicts: Vec<SafetyVerdict>,
}

impl SafetyPass {
    /// Accepts a set of verdicts on `call` as a pass. Fails unless there is
    /// at least one verdict, all of them are passes, all concern `call`, and
    /// the rule checker is among them.
    pub fn from_verdicts(
        call: &CallString,
        verdicts: Vec<SafetyVerdict>,
    ) -> Result<Self, CodeExecError> {
        if !verdicts.iter().any(|v| v.checker == CheckerKind::RuleChecker) {
            return Err(CodeExecError::ContractViolation(
                "no rule-checker verdict for this call".into(),
            ));
        }
        if let Some(v) = verdicts.iter().find(|v| v.subject != call.as_str()) {
            return Err(CodeExecError::ContractViolation(format!(
                "verdict concerns a different call: {:?}",
                v.subject
            )));
        }
        if let Some(v) = verdicts.iter().find(|v| !v.is_pass()) {
            return Err(CodeExecError::ContractViolation(format!(
                "safety verdict is a rejection: {}",
                v.rationale
            )));
        }
        Ok(Self {
            raw: call.as_str().to_string(),
            verdicts,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn verdicts(&self) -> &[SafetyVerdict] {
        &self.verdicts
    }
}

/// Runs the rule checker and any extra checkers; all must pass.
#[derive(Clone)]
pub struct SafetyGate {
    extra: Vec<Arc<dyn SafetyChecker>>,
}

impl Default for SafetyGate {
    fn default() -> Self {
        Self::rules_only()
    }
}

impl SafetyGate {
    pub fn rules_only() -> Self {
        Self { extra: Vec::new() }
    }

    pub fn with_checker(mut self, checker: Arc<dyn SafetyChecker>) -> Self {
        self.extra.push(checker);
        self
    }

    /// All verdicts, rule checker first.
    pub async fn review(&self, call: &CallString) -> Result<Vec<SafetyVerdict>, CodeExecError> {
        let mut verdicts = vec![RuleChecker.evaluate(call)];
        for c in &self.extra {
            verdicts.push(c.check(call).await?);
        }
        Ok(verdicts)
    }

    pub async fn approve(&self, call: &CallString) -> Result<SafetyPass, CodeExecError> {
        let verdicts = self.review(call).await?;
        if let Some(v) = verdicts.iter().find(|v| !v.is_pass()) {
            return Err(CodeExecError::Rejected(v.clone()));
        }
        SafetyPass::from_verdicts(call, verdicts)
    }
}

/// A call that passed both checks. The only input accepted by dispatch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApprovedCall {
    call: ParsedCall,
    safety: SafetyPass,
}

impl ApprovedCall {
    pub fn new(safety: SafetyPass, call: ParsedCall) -> Result<Self, CodeExecError> {
        if safety.raw != call.raw {
            return Err(CodeExecError::ContractViolation(format!(
                "safety pass covers {:?}, not {:?}",
                safety.raw, call.raw
            )));
        }
        Ok(Self { call, safety })
    }

    pub fn call(&self) -> &ParsedCall {
        &self.call
    }

    pub fn safety(&self) -> &SafetyPass {
        &self.safety
    }
}
