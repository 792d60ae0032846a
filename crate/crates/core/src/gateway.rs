//! Chat-completion access: provider abstraction, retry with backoff, a
//! content-addressed response cache, per-provider concurrency limits and
//! token metering.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub provider_name: String,
    pub model_id: String,
    /// `None` leaves the parameter out of the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_completion_tokens: u32,
}

impl ModelProfile {
    pub fn new(provider: &str, model: &str, temperature: Option<f64>, top_p: Option<f64>) -> Self {
        Self {
            provider_name: provider.to_string(),
            model_id: model.to_string(),
            temperature,
            top_p,
            max_completion_tokens: 8192,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidProfile(m));
        if let Some(t) = self.temperature {
            if !(t >= 0.0) {
                return bad(format!("temperature {t} must be >= 0"));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("top_p {p} must lie in (0, 1]"));
            }
        }
        if self.max_completion_tokens == 0 {
            return bad("max_completion_tokens must be positive".into());
        }
        if self.provider_name.is_empty() || self.model_id.is_empty() {
            return bad("provider and model id must be set".into());
        }
        Ok(())
    }

    pub fn glm() -> Self {
        Self::new("zhipu", "glm-4.7", Some(0.1), Some(1.0))
    }

    pub fn deepseek() -> Self {
        Self::new("deepseek", "deepseek-chat", Some(0.1), Some(1.0))
    }

    pub fn gpt() -> Self {
        Self::new("openai", "gpt-5.2", None, None)
    }

    pub fn gemini() -> Self {
        Self::new("gemini", "gemini-3-pro-preview", Some(0.1), Some(1.0))
    }

    /// Validation runs with deterministic decoding.
    pub fn deepseek_validator() -> Self {
        Self::new("deepseek", "deepseek-chat", Some(0.0), Some(1.0))
    }

    /// Named anonymizer backbones selectable from the command line.
    pub fn named(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "glm" | "glm-4.7" => Some(Self::glm()),
            "deepseek" | "deepseek-v3.2" | "ds" => Some(Self::deepseek()),
            "gpt" | "gpt-5.2" => Some(Self::gpt()),
            "gemini" | "gemini-3-pro" => Some(Self::gemini()),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed for provider `{0}`")]
    Auth(String),
    #[error("token ceiling {ceiling} exceeded ({used} used)")]
    BudgetExceeded { ceiling: u64, used: u64 },
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("no provider registered under `{0}`")]
    UnknownProvider(String),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
    #[error("baseline group `{0}` missing or without tokens")]
    MissingBaseline(String),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Transport { .. } => "transport_failure",
            GatewayError::Auth(_) => "auth_failure",
            GatewayError::BudgetExceeded { .. } => "budget_exceeded",
            GatewayError::Rejected(_) => "rejected",
            GatewayError::UnknownProvider(_) => "unknown_provider",
            GatewayError::InvalidProfile(_) => "invalid_profile",
            GatewayError::MissingBaseline(_) => "missing_baseline",
        }
    }
}

/// Failure reported by a provider for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderError {
    /// Network errors, rate limits and 5xx responses; retried.
    Transient(String),
    Auth(String),
    /// Anything else; not retried.
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub profile: &'a ModelProfile,
    pub system: &'a str,
    pub user: &'a str,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<ProviderReply, ProviderError>;
}

/// Any OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpProvider {
    name: String,
    base_url: String,
    api_key_env: String,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key_env: api_key_env.into(),
            client: reqwest::Client::new(),
        }
    }

    /// Endpoints and credential variables for the shipped backbones.
    pub fn defaults() -> Vec<HttpProvider> {
        vec![
            HttpProvider::new("zhipu", "https://open.bigmodel.cn/api/paas/v4", "ZHIPU_API_KEY"),
            HttpProvider::new("deepseek", "https://api.deepseek.com", "DEEPSEEK_API_KEY"),
            HttpProvider::new("openai", "https://api.openai.com/v1", "OPENAI_API_KEY"),
            HttpProvider::new(
                "gemini",
                "https://generativelanguage.googleapis.com/v1beta/openai",
                "GEMINI_API_KEY",
            ),
        ]
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

#[async_trait]
impl ChatProvider for HttpProvider {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<ProviderReply, ProviderError> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| ProviderError::Auth(format!("{} is not set", self.api_key_env)))?;
        let p = request.profile;
        let mut body = json!({
            "model": p.model_id,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_completion_tokens": p.max_completion_tokens,
        });
        if let Some(t) = p.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(tp) = p.top_p {
            body["top_p"] = json!(tp);
        }
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(key)
            .json(&body)
            .send()
            .await
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("{}: HTTP {status}", self.name)));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("malformed response body: {e}")))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))?;
        Ok(ProviderReply {
            text: content.to_string(),
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        })
    }
}

type ScriptFn = dyn Fn(ChatRequest<'_>) -> Result<ProviderReply, ProviderError> + Send + Sync;

/// Deterministic provider driven by a closure or a fixed reply queue.
pub struct ScriptedProvider {
    script: Box<ScriptFn>,
}

impl ScriptedProvider {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(ChatRequest<'_>) -> Result<ProviderReply, ProviderError> + Send + Sync + 'static,
    {
        Self { script: Box::new(f) }
    }

    /// Returns the queued replies in order, then fails transiently.
    pub fn queue<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        let next = std::sync::Mutex::new(replies.into_iter());
        Self::new(move |req| {
            let text = next
                .lock()
                .expect("queue lock")
                .next()
                .ok_or_else(|| ProviderError::Fatal("script exhausted".into()))?;
            Ok(ProviderReply::estimated(req, text))
        })
    }
}

impl ProviderReply {
    /// Reply whose token counts are whitespace-token estimates.
    pub fn estimated(req: ChatRequest<'_>, text: String) -> Self {
        let count = |s: &str| s.split_whitespace().count() as u64;
        Self {
            prompt_tokens: count(req.system) + count(req.user),
            completion_tokens: count(&text),
            text,
        }
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<ProviderReply, ProviderError> {
        (self.script)(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Success,
    ParseFailure,
    TransportFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: String,
    pub provider: String,
    pub model_id: String,
    pub request_digest: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Wall-clock time; excluded from persisted ledgers.
    #[serde(skip)]
    pub latency_ms: u64,
    pub attempts: u32,
    pub cached: bool,
    pub outcome: CallOutcome,
}

impl CallRecord {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub record: CallRecord,
}

/// Stable hash of everything that determines a response.
pub fn request_digest(profile: &ModelProfile, system: &str, user: &str) -> String {
    let key = json!({
        "model": profile.model_id,
        "system": system,
        "user": user,
        "temperature": profile.temperature,
        "top_p": profile.top_p,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    response: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    timestamp: u64,
    checksum: String,
}

fn entry_checksum(digest: &str, response: &str, prompt: u64, completion: u64) -> String {
    let mut h = Sha256::new();
    h.update(digest.as_bytes());
    h.update([0]);
    h.update(response.as_bytes());
    h.update([0]);
    h.update(prompt.to_le_bytes());
    h.update(completion.to_le_bytes());
    hex::encode(h.finalize())
}

/// Persistent response cache: one JSON file per request digest.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
    evictions: Arc<AtomicU64>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, evictions: Arc::new(AtomicU64::new(0)) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Corrupt entries are evicted and reported as misses.
    pub fn get(&self, digest: &str) -> Option<ProviderReply> {
        let path = self.path(digest);
        let bytes = std::fs::read(&path).ok()?;
        let entry = serde_json::from_slice::<CacheEntry>(&bytes).ok().filter(|e| {
            e.digest == digest
                && e.checksum == entry_checksum(digest, &e.response, e.prompt_tokens, e.completion_tokens)
        });
        match entry {
            Some(e) => Some(ProviderReply {
                text: e.response,
                prompt_tokens: e.prompt_tokens,
                completion_tokens: e.completion_tokens,
            }),
            None => {
                tracing::warn!(digest, "cache entry failed integrity check; evicting");
                let _ = std::fs::remove_file(&path);
                self.evictions.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put(&self, digest: &str, reply: &ProviderReply) -> std::io::Result<()> {
        let entry = CacheEntry {
            digest: digest.to_string(),
            response: reply.text.clone(),
            prompt_tokens: reply.prompt_tokens,
            completion_tokens: reply.completion_tokens,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            checksum: entry_checksum(digest, &reply.text, reply.prompt_tokens, reply.completion_tokens),
        };
        let tmp = self.dir.join(format!(".{digest}.{}.tmp", uuid::Uuid::new_v4()));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        std::fs::rename(tmp, self.path(digest))
    }

    pub fn evictions(&self) -> u64 {
        self.evictions.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1 << (attempt - 1).min(16));
        let jitter = rand::thread_rng().gen_range(0.5..=1.0);
        exp.min(self.max_delay).mul_f64(jitter)
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

struct Registered {
    provider: Arc<dyn ChatProvider>,
    limiter: Arc<Semaphore>,
}

/// Entry point for every model call. Cheap to share behind an `Arc`.
pub struct Gateway {
    providers: HashMap<String, Registered>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    ceiling: Option<u64>,
    used: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .field("cache", &self.cache)
            .field("retry", &self.retry)
            .field("ceiling", &self.ceiling)
            .finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self {
            providers: HashMap::new(),
            cache: None,
            retry: RetryPolicy::default(),
            ceiling: None,
            used: AtomicU64::new(0),
        }
    }

    /// Gateway with the four hosted providers registered.
    pub fn hosted() -> Self {
        HttpProvider::defaults().into_iter().fold(Self::new(), |g, p| {
            let name = p.name().to_string();
            g.with_provider(name, p)
        })
    }

    pub fn with_provider(self, name: impl Into<String>, provider: impl ChatProvider + 'static) -> Self {
        self.with_provider_limit(name, provider, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_provider_limit(
        mut self,
        name: impl Into<String>,
        provider: impl ChatProvider + 'static,
        max_in_flight: usize,
    ) -> Self {
        self.providers.insert(
            name.into(),
            Registered {
                provider: Arc::new(provider),
                limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
            },
        );
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_token_ceiling(mut self, ceiling: Option<u64>) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Provider tokens consumed so far (cache hits excluded).
    pub fn tokens_used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub async fn complete(&self, profile: &ModelProfile, system: &str, user: &str) -> Result<Completion, GatewayError> {
        self.call(profile, system, user, false).await
    }

    /// Like [`Gateway::complete`] but consults the cache first when one is configured.
    pub async fn cached_complete(
        &self,
        profile: &ModelProfile,
        system: &str,
        user: &str,
    ) -> Result<Completion, GatewayError> {
        self.call(profile, system, user, true).await
    }

    pub async fn call(
        &self,
        profile: &ModelProfile,
        system: &str,
        user: &str,
        use_cache: bool,
    ) -> Result<Completion, GatewayError> {
        profile.validate()?;
        let digest = request_digest(profile, system, user);
        let record = |prompt, completion, attempts, cached, latency_ms| CallRecord {
            stage: String::new(),
            provider: profile.provider_name.clone(),
            model_id: profile.model_id.clone(),
            request_digest: digest.clone(),
            prompt_tokens: prompt,
            completion_tokens: completion,
            latency_ms,
            attempts,
            cached,
            outcome: CallOutcome::Success,
        };
        let cache = self.cache.as_ref().filter(|_| use_cache);
        if let Some(hit) = cache.and_then(|c| c.get(&digest)) {
            return Ok(Completion { text: hit.text, record: record(0, 0, 0, true, 0) });
        }
        let registered = self
            .providers
            .get(&profile.provider_name)
            .ok_or_else(|| GatewayError::UnknownProvider(profile.provider_name.clone()))?;
        if let Some(ceiling) = self.ceiling {
            let used = self.tokens_used();
            if used >= ceiling {
                return Err(GatewayError::BudgetExceeded { ceiling, used });
            }
        }
        let _permit = registered.limiter.acquire().await.expect("limiter never closed");
        let start = Instant::now();
        let request = ChatRequest { profile, system, user };
        let mut attempt = 0;
        let reply = loop {
            attempt += 1;
            match registered.provider.chat(request).await {
                Ok(reply) => break reply,
                Err(ProviderError::Auth(m)) => {
                    return Err(GatewayError::Auth(format!("{}: {m}", profile.provider_name)))
                }
                Err(ProviderError::Fatal(m)) => return Err(GatewayError::Rejected(m)),
                Err(ProviderError::Transient(m)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::Transport { attempts: attempt, message: m });
                    }
                    tracing::debug!(attempt, error = %m, "transient provider failure; retrying");
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                }
            }
        };
        let latency = start.elapsed().as_millis() as u64;
        let total = reply.prompt_tokens + reply.completion_tokens;
        let used = self.used.fetch_add(total, Ordering::SeqCst) + total;
        if let Some(ceiling) = self.ceiling {
            if used > ceiling {
                return Err(GatewayError::BudgetExceeded { ceiling, used });
            }
        }
        if let Some(c) = cache {
            if let Err(e) = c.put(&digest, &reply) {
                tracing::warn!(error = %e, "failed to write cache entry");
            }
        }
        Ok(Completion {
            record: record(reply.prompt_tokens, reply.completion_tokens, attempt, false, latency),
            text: reply.text,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageGrouping {
    Stage,
    Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub group: String,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub relative_cost: f64,
}

/// Token totals per group, normalized to the baseline group's total.
/// Records are `(method, record)` pairs.
pub fn usage_report<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a CallRecord)>,
    grouping: UsageGrouping,
    baseline: &str,
) -> Result<Vec<UsageRow>, GatewayError> {
    let mut groups: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (method, r) in records {
        let key = match grouping {
            UsageGrouping::Stage => r.stage.clone(),
            UsageGrouping::Method => method.to_string(),
        };
        let g = groups.entry(key).or_default();
        g.0 += 1;
        g.1 += r.prompt_tokens;
        g.2 += r.completion_tokens;
    }
    let base = groups
        .get(baseline)
        .map(|g| g.1 + g.2)
        .filter(|t| *t > 0)
        .ok_or_else(|| GatewayError::MissingBaseline(baseline.to_string()))?;
    Ok(groups
        .into_iter()
        .map(|(group, (calls, prompt, completion))| UsageRow {
            group,
            calls,
            prompt_tokens: prompt,
            completion_tokens: completion,
            total_tokens: prompt + completion,
            relative_cost: (prompt + completion) as f64 / base as f64,
        })
        .collect())
}
