//! Uniform providers for chat completion, web search, and text embedding,
//! plus the gateway wrapper that adds call accounting, bounded retries,
//! in-flight caps, and search hygiene (host exclusion, top-k truncation).

pub mod live;
pub mod mock;
mod templates;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use templates::{TemplateError, TemplateId, DEFAULT_PLAN_EXAMPLE};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("rate limited by provider")]
    RateLimited,
    #[error("no mock fixture for request key `{0}`")]
    MissingFixture(String),
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
}

impl ProviderError {
    fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::RateLimited => true,
            ProviderError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
}

/// One ranked hit returned by the search gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
    /// 1-based rank within the batch for `source_query`.
    pub rank: usize,
    pub source_query: String,
}

/// Raw provider hit before ranking and hygiene are applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSearchHit {
    pub title: String,
    pub url: String,
    #[serde(default)]
    pub snippet: String,
}

/// A unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub norm: f64,
}

impl EmbeddingVector {
    /// Normalizes the raw values to unit length. An all-zero vector gets a
    /// fixed basis component so the result is still unit length.
    pub fn from_values(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm <= f64::EPSILON {
            if values.is_empty() {
                values.push(1.0);
            } else {
                values[0] = 1.0;
            }
            return Self { values, norm: 1.0 };
        }
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
        let stored = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        Self {
            values,
            norm: stored,
        }
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let mut dot = 0.0;
        let mut norm_a = 0.0;
        let mut norm_b = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a as f64, *b as f64);
            dot += a * b;
            norm_a += a * a;
            norm_b += b * b;
        }
        if norm_a == 0.0 || norm_b == 0.0 {
            return 0.0;
        }
        dot / (norm_a.sqrt() * norm_b.sqrt())
    }
}

/// The request handed to a chat provider. Mock providers key off the
/// template id and discriminator; live providers send the rendered prompt.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub discriminator: Option<String>,
    pub prompt: String,
    pub bindings: BTreeMap<String, String>,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[async_trait]
pub trait SearchProvider: Send + Sync {
    async fn search(&self, query: &str, k: usize) -> Result<Vec<RawSearchHit>, ProviderError>;
}

#[async_trait]
pub trait EmbedProvider: Send + Sync {
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    /// Stable identifier recorded in index metadata.
    fn id(&self) -> String;
}

/// Whitespace-token count scaled by 1.3, rounded up. A rough usage
/// estimate; exact tokenizers are out of scope.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 13).div_ceil(10)
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub chat_calls: u64,
    pub search_calls: u64,
    pub embed_calls: u64,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub per_template: BTreeMap<String, u64>,
}

/// Atomic per-run usage counters shared across concurrent pipeline tasks.
#[derive(Debug, Default)]
pub struct CallCounter {
    chat_calls: AtomicU64,
    search_calls: AtomicU64,
    embed_calls: AtomicU64,
    prompt_tokens: AtomicU64,
    reply_tokens: AtomicU64,
    per_template: Mutex<BTreeMap<String, u64>>,
}

impl CallCounter {
    fn record_chat(&self, template: TemplateId, prompt_tokens: u64, reply_tokens: u64) {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::SeqCst);
        self.reply_tokens.fetch_add(reply_tokens, Ordering::SeqCst);
        let mut per = self.per_template.lock().expect("counter mutex");
        *per.entry(template.as_str().to_string()).or_insert(0) += 1;
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            search_calls: self.search_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            reply_tokens: self.reply_tokens.load(Ordering::SeqCst),
            per_template: self.per_template.lock().expect("counter mutex").clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        // 3 attempts with exponential backoff for transport/429 failures.
        Self {
            attempts: 3,
            base_delay_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Maximum results kept per search query.
    pub search_k: usize,
    /// Host glob patterns removed from search results before truncation.
    pub excluded_hosts: Vec<String>,
    pub retry: RetryPolicy,
    pub chat_in_flight: usize,
    pub search_in_flight: usize,
    pub embed_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            search_k: 5,
            excluded_hosts: vec!["*.wikipedia.org".to_string()],
            retry: RetryPolicy::default(),
            chat_in_flight: 8,
            search_in_flight: 8,
            embed_in_flight: 8,
        }
    }
}

/// One recorded chat completion: the rendered prompt, the reply, and the
/// token estimates. Callers assemble these into the run transcript in a
/// deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    pub key: Option<String>,
    pub prompt: String,
    pub reply: String,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
}

/// A completed chat call: the reply plus its transcript record.
#[derive(Debug, Clone)]
pub struct Completion {
    pub reply: String,
    pub transcript: TranscriptEntry,
}

pub struct Gateway {
    chat: std::sync::Arc<dyn ChatProvider>,
    search: std::sync::Arc<dyn SearchProvider>,
    embed: std::sync::Arc<dyn EmbedProvider>,
    counter: CallCounter,
    config: GatewayConfig,
    chat_permits: Semaphore,
    search_permits: Semaphore,
    embed_permits: Semaphore,
}

impl Gateway {
    pub fn new(
        chat: std::sync::Arc<dyn ChatProvider>,
        search: std::sync::Arc<dyn SearchProvider>,
        embed: std::sync::Arc<dyn EmbedProvider>,
        config: GatewayConfig,
    ) -> Self {
        let chat_permits = Semaphore::new(config.chat_in_flight.max(1));
        let search_permits = Semaphore::new(config.search_in_flight.max(1));
        let embed_permits = Semaphore::new(config.embed_in_flight.max(1));
        Self {
            chat,
            search,
            embed,
            counter: CallCounter::default(),
            config,
            chat_permits,
            search_permits,
            embed_permits,
        }
    }

    pub fn counter(&self) -> &CallCounter {
        &self.counter
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn embedder_id(&self) -> String {
        self.embed.id()
    }

    async fn with_retries<T, F, Fut>(&self, mut call: F) -> Result<T, GatewayError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, ProviderError>>,
    {
        let attempts = self.config.retry.attempts.max(1);
        let mut delay = Duration::from_millis(self.config.retry.base_delay_ms);
        let mut last = None;
        for attempt in 1..=attempts {
            match call().await {
                Ok(value) => return Ok(value),
                Err(err) => {
                    let retryable = err.is_retryable();
                    last = Some(err);
                    if !retryable || attempt == attempts {
                        break;
                    }
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
            }
        }
        Err(GatewayError::Provider {
            attempts,
            source: last.expect("at least one attempt ran"),
        })
    }

    /// Renders the template, dispatches it to the chat provider with
    /// bounded retries, and records the call in the usage counter.
    pub async fn complete(
        &self,
        template: TemplateId,
        discriminator: Option<&str>,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Completion, GatewayError> {
        let prompt = template.render(bindings)?;
        let request = ChatRequest {
            template,
            discriminator: discriminator.map(str::to_string),
            prompt: prompt.clone(),
            bindings: bindings.clone(),
        };
        let _permit = self.chat_permits.acquire().await.expect("semaphore open");
        let reply = self.with_retries(|| self.chat.complete(&request)).await?;
        let prompt_tokens = estimate_tokens(&prompt);
        let reply_tokens = estimate_tokens(&reply);
        self.counter.record_chat(template, prompt_tokens, reply_tokens);
        Ok(Completion {
            transcript: TranscriptEntry {
                stage: template.as_str().to_string(),
                key: discriminator.map(str::to_string),
                prompt,
                reply: reply.clone(),
                prompt_tokens,
                reply_tokens,
            },
            reply,
        })
    }

    /// Runs one search query: excluded hosts are removed before the list is
    /// truncated to `search_k`, and surviving hits are ranked 1..=n.
    pub async fn search(&self, query: &str) -> Result<Vec<SearchResult>, GatewayError> {
        let k = self.config.search_k.max(1);
        let _permit = self.search_permits.acquire().await.expect("semaphore open");
        let hits = self.with_retries(|| self.search.search(query, k)).await?;
        self.counter.search_calls.fetch_add(1, Ordering::SeqCst);
        let results = hits
            .into_iter()
            .filter(|hit| !hit.url.is_empty())
            .filter(|hit| !host_is_excluded(&hit.url, &self.config.excluded_hosts))
            .take(k)
            .enumerate()
            .map(|(i, hit)| SearchResult {
                title: hit.title,
                url: hit.url,
                snippet: hit.snippet,
                rank: i + 1,
                source_query: query.to_string(),
            })
            .collect();
        Ok(results)
    }

    /// Embeds a batch of texts; every returned vector is unit-normalized.
    pub async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let _permit = self.embed_permits.acquire().await.expect("semaphore open");
        let vectors = self.with_retries(|| self.embed.embed(texts)).await?;
        self.counter.embed_calls.fetch_add(1, Ordering::SeqCst);
        Ok(vectors)
    }
}

/// Matches a URL's host against simple glob patterns such as
/// `*.wikipedia.org` (case-insensitive; `*` spans any run of characters).
pub fn host_is_excluded(url_text: &str, patterns: &[String]) -> bool {
    if patterns.is_empty() {
        return false;
    }
    let Ok(parsed) = url::Url::parse(url_text) else {
        // An unparseable URL cannot be vetted against the exclusion list.
        return true;
    };
    let Some(host) = parsed.host_str() else {
        return true;
    };
    let host = host.to_lowercase();
    patterns
        .iter()
        .any(|pattern| glob_match(&pattern.to_lowercase(), &host))
}

fn glob_match(pattern: &str, text: &str) -> bool {
    fn inner(p: &[u8], t: &[u8]) -> bool {
        match p.first() {
            None => t.is_empty(),
            Some(b'*') => {
                (0..=t.len()).any(|skip| inner(&p[1..], &t[skip..]))
            }
            Some(c) => t.first() == Some(c) && inner(&p[1..], &t[1..]),
        }
    }
    inner(pattern.as_bytes(), text.as_bytes())
}
