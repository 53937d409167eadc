//! Provider abstraction shared by every model role.
//!
//! All model traffic goes through [`Gateway::complete`], which consults the
//! response cache, enforces the per-question [`QueryBudget`], and retries
//! transient provider failures with exponential backoff.

mod budget;
mod cache;
mod http;
mod scripted;
mod session;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use budget::{BudgetCounts, QueryBudget, Stage};
pub use cache::{CacheRecord, ResponseCache};
pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{Matcher, ReplayError, ScriptRecord, ScriptedProvider};
pub use session::{QueryId, Session, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    ChartSpec,
    VisionDescribe,
    Knowledge,
    Summary,
    Planner,
    FinalAnswer,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::ChartSpec,
        ModelRole::VisionDescribe,
        ModelRole::Knowledge,
        ModelRole::Summary,
        ModelRole::Planner,
        ModelRole::FinalAnswer,
    ];

    pub fn stage(self) -> Stage {
        match self {
            ModelRole::ChartSpec
            | ModelRole::VisionDescribe
            | ModelRole::Knowledge
            | ModelRole::Summary => Stage::Coarse,
            ModelRole::Planner => Stage::Fine,
            ModelRole::FinalAnswer => Stage::Final,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelRole::ChartSpec => "chart_spec",
            ModelRole::VisionDescribe => "vision_describe",
            ModelRole::Knowledge => "knowledge",
            ModelRole::Summary => "summary",
            ModelRole::Planner => "planner",
            ModelRole::FinalAnswer => "final_answer",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelRole::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown model role `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attachment {
    pub mime: String,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Attachment>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::System,
            text: text.into(),
            image: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn with_image(mut self, mime: impl Into<String>, bytes: Vec<u8>) -> Self {
        self.image = Some(Attachment {
            mime: mime.into(),
            bytes,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            decoding: DecodingParams::default(),
        }
    }

    /// All message texts joined by newlines; what substring matchers see.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn has_image(&self) -> bool {
        self.messages.iter().any(|m| m.image.is_some())
    }

    /// SHA-256 over the model id, messages and decoding parameters.
    pub fn cache_key(&self, model: &str) -> String {
        /// Role, text, and (mime, hex digest) of any attachment.
        type KeyedMessage<'a> = (MessageRole, &'a str, Option<(String, String)>);
        #[derive(Serialize)]
        struct Keyed<'a> {
            model: &'a str,
            messages: Vec<KeyedMessage<'a>>,
            decoding: &'a DecodingParams,
        }
        let keyed = Keyed {
            model,
            messages: self
                .messages
                .iter()
                .map(|m| {
                    (
                        m.role,
                        m.text.as_str(),
                        m.image
                            .as_ref()
                            .map(|a| (a.mime.clone(), hex::encode(Sha256::digest(&a.bytes)))),
                    )
                })
                .collect(),
            decoding: &self.decoding,
        };
        let bytes = serde_json::to_vec(&keyed).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Short hex digest of a prompt, for traces.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub cached: bool,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            finish_reason: "stop".to_string(),
            latency_ms: 0,
            cached: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("script miss for {role} request #{ordinal}")]
    ScriptMiss { role: ModelRole, ordinal: usize },
    #[error("{count} script matchers fire for {role} request #{ordinal}")]
    AmbiguousMatcher {
        role: ModelRole,
        ordinal: usize,
        count: usize,
    },
    #[error("missing API key in environment variable `{0}`")]
    AuthMissing(String),
    #[error("provider does not accept image input")]
    NoVisionSupport,
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{stage} query budget exhausted")]
    BudgetExceeded { stage: Stage },
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(ProviderError),
    #[error("missing API key in environment variable `{0}`")]
    AuthMissing(String),
    #[error("no provider bound for role {0}")]
    RoleUnbound(ModelRole),
    #[error("provider for {0} does not accept image input")]
    NoVisionSupport(ModelRole),
}

/// A model backend. Implementations must tolerate concurrent calls.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    fn supports_vision(&self) -> bool {
        false
    }

    fn complete(
        &self,
        role: ModelRole,
        model: &str,
        request: &ChatRequest,
    ) -> Result<ChatResponse, ProviderError>;

    /// A view of this provider for one question. Stateful providers (the
    /// scripted one) return a fresh instance; stateless ones return `self`.
    fn scoped(self: Arc<Self>, scope: &str) -> Arc<dyn Provider>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

#[derive(Clone)]
pub struct RoleBinding {
    pub provider: Arc<dyn Provider>,
    pub model: String,
    pub decoding: DecodingParams,
}

impl fmt::Debug for RoleBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoleBinding")
            .field("provider", &self.provider.id())
            .field("model", &self.model)
            .field("decoding", &self.decoding)
            .finish()
    }
}

/// Routes role requests to their bound providers.
#[derive(Clone, Debug, Default)]
pub struct Gateway {
    bindings: HashMap<ModelRole, RoleBinding>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds every role to the same provider and model.
    pub fn uniform(provider: Arc<dyn Provider>, model: impl Into<String>) -> Self {
        let model = model.into();
        let mut g = Gateway::new();
        for role in ModelRole::ALL {
            g.bind(role, provider.clone(), model.clone(), DecodingParams::default());
        }
        g
    }

    pub fn bind(
        &mut self,
        role: ModelRole,
        provider: Arc<dyn Provider>,
        model: impl Into<String>,
        decoding: DecodingParams,
    ) -> &mut Self {
        self.bindings.insert(
            role,
            RoleBinding {
                provider,
                model: model.into(),
                decoding,
            },
        );
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn binding(&self, role: ModelRole) -> Option<&RoleBinding> {
        self.bindings.get(&role)
    }

    pub fn is_bound(&self, role: ModelRole) -> bool {
        self.bindings.contains_key(&role)
    }

    pub fn supports_vision(&self, role: ModelRole) -> bool {
        self.bindings
            .get(&role)
            .is_some_and(|b| b.provider.supports_vision())
    }

    /// Per-question view: stateful providers get a fresh scoped instance.
    /// Roles sharing one provider keep sharing one scoped instance.
    pub fn scoped(&self, scope: &str) -> Gateway {
        let mut scoped_by_ptr: Vec<(*const (), Arc<dyn Provider>)> = Vec::new();
        let mut bindings = HashMap::new();
        let mut roles: Vec<_> = self.bindings.keys().copied().collect();
        roles.sort();
        for role in roles {
            let b = &self.bindings[&role];
            let ptr = Arc::as_ptr(&b.provider) as *const ();
            let provider = match scoped_by_ptr.iter().find(|(p, _)| *p == ptr) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = b.provider.clone().scoped(scope);
                    scoped_by_ptr.push((ptr, p.clone()));
                    p
                }
            };
            bindings.insert(
                role,
                RoleBinding {
                    provider,
                    model: b.model.clone(),
                    decoding: b.decoding.clone(),
                },
            );
        }
        Gateway {
            bindings,
            cache: self.cache.clone(),
            retry: self.retry.clone(),
        }
    }

    /// Issues one logical query for `role`.
    ///
    /// A cache hit returns the stored response and consumes no budget. A miss
    /// reserves a slot in the role's stage budget, calls the provider with
    /// retries on transient failures, and persists the response; the slot is
    /// released if the call ultimately fails.
    pub fn complete(
        &self,
        role: ModelRole,
        mut request: ChatRequest,
        budget: &QueryBudget,
    ) -> Result<ChatResponse, GatewayError> {
        let binding = self
            .bindings
            .get(&role)
            .ok_or(GatewayError::RoleUnbound(role))?;
        request.decoding = binding.decoding.clone();
        if request.has_image() && !binding.provider.supports_vision() {
            return Err(GatewayError::NoVisionSupport(role));
        }
        let key = request.cache_key(&binding.model);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key) {
                let mut r = ChatResponse::new(text);
                r.cached = true;
                return Ok(r);
            }
        }
        let stage = role.stage();
        if !budget.try_reserve(stage) {
            return Err(GatewayError::BudgetExceeded { stage });
        }
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        let result = loop {
            attempt += 1;
            match binding.provider.complete(role, &binding.model, &request) {
                Err(e) if e.is_transient() && attempt < self.retry.attempts.max(1) => {
                    tracing::warn!(%role, attempt, error = %e, "retrying provider call");
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                    backoff *= 2;
                }
                other => break other,
            }
        };
        match result {
            Ok(response) => {
                if let Some(cache) = &self.cache {
                    let digest = format!("{}:{}", role, binding.model);
                    if let Err(e) = cache.put(&key, &digest, &response.text) {
                        tracing::warn!(error = %e, "failed to persist cached response");
                    }
                }
                Ok(response)
            }
            Err(e) => {
                budget.refund(stage);
                Err(match e {
                    ProviderError::AuthMissing(v) => GatewayError::AuthMissing(v),
                    ProviderError::NoVisionSupport => GatewayError::NoVisionSupport(role),
                    other => GatewayError::ProviderUnavailable(other),
                })
            }
        }
    }
}
