//! Deterministic mock providers backed by JSON Lines fixture files.
//!
//! Chat fixtures live in `chat.jsonl` as `{"key": ..., "response": ...}`
//! records; search fixtures in `search.jsonl` as `{"query": ..., "results":
//! [...]}`. Lookups key chat requests by `TemplateId` or
//! `TemplateId::discriminator` (iteration number or section title), so two
//! runs over the same fixture set produce byte-identical pipeline output.
//! The search mock can inject seeded artificial latencies to shuffle
//! completion order without affecting results.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::{ChatProvider, ChatRequest, EmbedProvider, EmbeddingVector, ProviderError, RawSearchHit, SearchProvider};

pub const CHAT_FIXTURE_FILE: &str = "chat.jsonl";
pub const SEARCH_FIXTURE_FILE: &str = "search.jsonl";

#[derive(Debug, Deserialize)]
struct ChatFixtureRecord {
    key: String,
    #[serde(default)]
    response: String,
    #[serde(default)]
    delay_ms: u64,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SearchFixtureRecord {
    query: String,
    #[serde(default)]
    results: Vec<RawSearchHit>,
    #[serde(default)]
    delay_ms: u64,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct ChatEntry {
    response: String,
    delay_ms: u64,
    error: Option<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ProviderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::Transport(format!("reading {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| {
            ProviderError::InvalidResponse(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Fixture-backed chat provider. Replies are resolved by
/// `"<Template>::<discriminator>"` first, then the bare template name.
/// A response of `"$echo:<binding>"` returns that binding's value.
#[derive(Debug, Default)]
pub struct MockChatProvider {
    entries: HashMap<String, ChatEntry>,
}

impl MockChatProvider {
    pub fn from_dir(dir: &Path) -> Result<Self, ProviderError> {
        let records: Vec<ChatFixtureRecord> = read_jsonl(&dir.join(CHAT_FIXTURE_FILE))?;
        let mut entries = HashMap::new();
        for r in records {
            entries.insert(
                r.key,
                ChatEntry {
                    response: r.response,
                    delay_ms: r.delay_ms,
                    error: r.error,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        let entries = pairs
            .iter()
            .map(|(k, v)| {
                (
                    k.to_string(),
                    ChatEntry {
                        response: v.to_string(),
                        ..ChatEntry::default()
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn insert(&mut self, key: &str, response: &str) {
        self.entries.insert(
            key.to_string(),
            ChatEntry {
                response: response.to_string(),
                ..ChatEntry::default()
            },
        );
    }

    pub fn insert_delayed(&mut self, key: &str, response: &str, delay_ms: u64) {
        self.entries.insert(
            key.to_string(),
            ChatEntry {
                response: response.to_string(),
                delay_ms,
                error: None,
            },
        );
    }

    pub fn insert_error(&mut self, key: &str, message: &str) {
        self.entries.insert(
            key.to_string(),
            ChatEntry {
                response: String::new(),
                delay_ms: 0,
                error: Some(message.to_string()),
            },
        );
    }

    fn resolve(&self, request: &ChatRequest) -> Result<&ChatEntry, ProviderError> {
        let template = request.template.as_str();
        if let Some(disc) = &request.discriminator {
            let keyed = format!("{template}::{disc}");
            if let Some(entry) = self.entries.get(&keyed) {
                return Ok(entry);
            }
        }
        self.entries.get(template).ok_or_else(|| {
            let wanted = match &request.discriminator {
                Some(d) => format!("{template}::{d}"),
                None => template.to_string(),
            };
            ProviderError::MissingFixture(wanted)
        })
    }
}

#[async_trait]
impl ChatProvider for MockChatProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let entry = self.resolve(request)?;
        if entry.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(entry.delay_ms)).await;
        }
        if let Some(message) = &entry.error {
            return Err(ProviderError::Transport(message.clone()));
        }
        if let Some(binding) = entry.response.strip_prefix("$echo:") {
            return request.bindings.get(binding).cloned().ok_or_else(|| {
                ProviderError::InvalidResponse(format!("echo of unknown binding `{binding}`"))
            });
        }
        Ok(entry.response.clone())
    }
}

#[derive(Debug, Clone, Default)]
struct SearchEntry {
    results: Vec<RawSearchHit>,
    delay_ms: u64,
    error: Option<String>,
}

/// Fixture-backed search provider. Unknown queries return an empty result
/// list. An optional latency seed derives a per-query artificial delay so
/// tests can shuffle fan-out completion order adversarially.
#[derive(Debug, Default)]
pub struct MockSearchProvider {
    entries: HashMap<String, SearchEntry>,
    latency_seed: Option<u64>,
}

impl MockSearchProvider {
    pub fn from_dir(dir: &Path) -> Result<Self, ProviderError> {
        let records: Vec<SearchFixtureRecord> = read_jsonl(&dir.join(SEARCH_FIXTURE_FILE))?;
        let mut entries = HashMap::new();
        for r in records {
            entries.insert(
                r.query,
                SearchEntry {
                    results: r.results,
                    delay_ms: r.delay_ms,
                    error: r.error,
                },
            );
        }
        Ok(Self {
            entries,
            latency_seed: None,
        })
    }

    pub fn from_fixtures(fixtures: &[(&str, Vec<RawSearchHit>)]) -> Self {
        let entries = fixtures
            .iter()
            .map(|(q, hits)| {
                (
                    q.to_string(),
                    SearchEntry {
                        results: hits.clone(),
                        ..SearchEntry::default()
                    },
                )
            })
            .collect();
        Self {
            entries,
            latency_seed: None,
        }
    }

    /// Derives a pseudo-random 0..25 ms delay per query from the seed.
    pub fn with_latency_seed(mut self, seed: u64) -> Self {
        self.latency_seed = Some(seed);
        self
    }

    pub fn insert_error(&mut self, query: &str, message: &str) {
        self.entries.insert(
            query.to_string(),
            SearchEntry {
                results: Vec::new(),
                delay_ms: 0,
                error: Some(message.to_string()),
            },
        );
    }
}

#[async_trait]
impl SearchProvider for MockSearchProvider {
    async fn search(&self, query: &str, _k: usize) -> Result<Vec<RawSearchHit>, ProviderError> {
        let entry = self.entries.get(query).cloned().unwrap_or_default();
        let mut delay = entry.delay_ms;
        if let Some(seed) = self.latency_seed {
            delay += fnv1a64(&format!("{seed}:{query}")) % 25;
        }
        if delay > 0 {
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        if let Some(message) = entry.error {
            return Err(ProviderError::Transport(message));
        }
        Ok(entry.results)
    }
}

/// Hashed term-frequency embedder: each lowercased alphanumeric token is
/// hashed into a fixed-dimension vector, counted, and the result
/// L2-normalized. Identical texts always map to identical vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedProvider {
    pub dimension: usize,
}

impl Default for MockEmbedProvider {
    fn default() -> Self {
        Self { dimension: 1024 }
    }
}

impl MockEmbedProvider {
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0f32; self.dimension];
        for token in tokenize(text) {
            let slot = (fnv1a64(&token) % self.dimension as u64) as usize;
            values[slot] += 1.0;
        }
        EmbeddingVector::from_values(values)
    }
}

#[async_trait]
impl EmbedProvider for MockEmbedProvider {
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn id(&self) -> String {
        format!("mock-tf-{}", self.dimension)
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let token: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        if token.is_empty() {
            None
        } else {
            Some(token)
        }
    })
}

pub(crate) fn fnv1a64(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
