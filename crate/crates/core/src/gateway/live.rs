//! HTTP-backed providers: an OpenAI-compatible chat-completions endpoint,
//! a Google Custom Search style endpoint, and an embeddings endpoint.
//! Endpoints, models, and keys are all configurable so any compatible
//! hosted backbone can be swapped in.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, EmbedProvider, EmbeddingVector, ProviderError, RawSearchHit, SearchProvider};

fn map_reqwest_error(err: reqwest::Error) -> ProviderError {
    if let Some(status) = err.status() {
        if status.as_u16() == 429 {
            return ProviderError::RateLimited;
        }
        return ProviderError::Status {
            status: status.as_u16(),
            message: err.to_string(),
        };
    }
    ProviderError::Transport(err.to_string())
}

async fn check_status(response: reqwest::Response) -> Result<reqwest::Response, ProviderError> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    if status.as_u16() == 429 {
        return Err(ProviderError::RateLimited);
    }
    let message = response.text().await.unwrap_or_default();
    Err(ProviderError::Status {
        status: status.as_u16(),
        message,
    })
}

pub struct LiveChatProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
}

impl LiveChatProvider {
    /// `endpoint` is the full chat-completions URL, e.g.
    /// `https://api.openai.com/v1/chat/completions`.
    pub fn new(endpoint: String, model: String, api_key: String, temperature: f64) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            model,
            api_key,
            temperature,
        }
    }
}

#[derive(Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[async_trait]
impl ChatProvider for LiveChatProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = ChatCompletionRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: self.temperature,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(map_reqwest_error)?;
        let response = check_status(response).await?;
        let parsed: ChatCompletionResponse = response.json().await.map_err(map_reqwest_error)?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::InvalidResponse("no choices in chat reply".into()))
    }
}

pub struct LiveSearchProvider {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
    engine_id: Option<String>,
}

impl LiveSearchProvider {
    pub fn new(endpoint: String, api_key: String, engine_id: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            api_key,
            engine_id,
        }
    }
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    #[serde(default)]
    title: String,
    link: String,
    #[serde(default)]
    snippet: String,
}

#[async_trait]
impl SearchProvider for LiveSearchProvider {
    async fn search(&self, query: &str, k: usize) -> Result<Vec<RawSearchHit>, ProviderError> {
        let mut request = self
            .client
            .get(&self.endpoint)
            .query(&[("key", self.api_key.as_str()), ("q", query)])
            .query(&[("num", k.to_string())]);
        if let Some(cx) = &self.engine_id {
            request = request.query(&[("cx", cx.as_str())]);
        }
        let response = request.send().await.map_err(map_reqwest_error)?;
        let response = check_status(response).await?;
        let parsed: SearchResponse = response.json().await.map_err(map_reqwest_error)?;
        Ok(parsed
            .items
            .into_iter()
            .map(|item| RawSearchHit {
                title: item.title,
                url: item.link,
                snippet: item.snippet,
            })
            .collect())
    }
}

pub struct LiveEmbedProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: String,
}

impl LiveEmbedProvider {
    pub fn new(endpoint: String, model: String, api_key: String) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            model,
            api_key,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

#[async_trait]
impl EmbedProvider for LiveEmbedProvider {
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(map_reqwest_error)?;
        let response = check_status(response).await?;
        let parsed: EmbeddingResponse = response.json().await.map_err(map_reqwest_error)?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector::from_values(d.embedding))
            .collect())
    }

    fn id(&self) -> String {
        format!("live-{}", self.model)
    }
}
