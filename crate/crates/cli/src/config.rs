//! Run configuration: a single TOML file describing providers (live
//! endpoints or mock fixtures), gateway limits, pipeline knobs, and paths.
//! Secrets are referenced by environment variable name, never stored.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use longform::corpus::DEFAULT_EXEMPLAR_N;
use longform::discovery::DiscoveryConfig;
use longform::gateway::live::{LiveChatProvider, LiveEmbedProvider, LiveSearchProvider};
use longform::gateway::mock::{MockChatProvider, MockEmbedProvider, MockSearchProvider};
use longform::gateway::{GatewayConfig, RetryPolicy};
use longform::writer::WriterConfig;
use longform::{Gateway, PipelineConfig};

pub const DEFAULT_LLM_KEY_ENV: &str = "LLM_API_KEY";
pub const DEFAULT_SEARCH_KEY_ENV: &str = "SEARCH_API_KEY";
pub const DEFAULT_EMBED_KEY_ENV: &str = "EMBED_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Live,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatProviderConfig {
    pub mode: Option<ProviderMode>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    /// Decoding temperature; 0 by default for reproducibility.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchProviderConfig {
    pub mode: Option<ProviderMode>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub engine_id: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedProviderConfig {
    pub mode: Option<ProviderMode>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub dimension: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    /// Directory holding `chat.jsonl` and `search.jsonl`. Setting it makes
    /// mock the default mode for all providers.
    pub mock_fixtures: Option<PathBuf>,
    #[serde(default)]
    pub chat: ChatProviderConfig,
    #[serde(default)]
    pub search: SearchProviderConfig,
    #[serde(default)]
    pub embed: EmbedProviderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub search_k: usize,
    pub excluded_hosts: Vec<String>,
    pub chat_in_flight: usize,
    pub search_in_flight: usize,
    pub embed_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let d = GatewayConfig::default();
        Self {
            search_k: d.search_k,
            excluded_hosts: d.excluded_hosts,
            chat_in_flight: d.chat_in_flight,
            search_in_flight: d.search_in_flight,
            embed_in_flight: d.embed_in_flight,
            retry: d.retry,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySection {
    pub exemplar_n: usize,
    pub max_iterations: usize,
    pub max_total_queries: usize,
    pub merged_query_cap: usize,
    pub preloaded_attributes: Vec<String>,
}

impl Default for DiscoverySection {
    fn default() -> Self {
        let d = DiscoveryConfig::default();
        Self {
            exemplar_n: DEFAULT_EXEMPLAR_N,
            max_iterations: d.max_iterations,
            max_total_queries: d.max_total_queries,
            merged_query_cap: d.merged_query_cap,
            preloaded_attributes: d.preloaded_attributes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WriterSection {
    pub section_ref_k: usize,
    pub max_parallel: usize,
    pub context_budget_tokens: usize,
}

impl Default for WriterSection {
    fn default() -> Self {
        let d = WriterConfig::default();
        Self {
            section_ref_k: d.section_ref_k,
            max_parallel: d.max_parallel,
            context_budget_tokens: d.context_budget_tokens,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Persisted corpus index consumed by `generate`.
    pub index: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub providers: ProvidersConfig,
    pub gateway: GatewaySection,
    pub discovery: DiscoverySection,
    pub writer: WriterSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Fixture paths are relative to the config file's directory.
        if let (Some(dir), Some(fixtures)) = (path.parent(), &config.providers.mock_fixtures) {
            if fixtures.is_relative() {
                config.providers.mock_fixtures = Some(dir.join(fixtures));
            }
        }
        if let (Some(dir), Some(index)) = (path.parent(), &config.paths.index) {
            if index.is_relative() {
                config.paths.index = Some(dir.join(index));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.writer.max_parallel < 1 {
            bail!("writer.max_parallel must be at least 1");
        }
        if self.gateway.search_k < 1 {
            bail!("gateway.search_k must be at least 1");
        }
        Ok(())
    }

    /// Forces every provider into mock mode with the given fixtures.
    pub fn with_mock_fixtures(mut self, dir: PathBuf) -> Self {
        self.providers.mock_fixtures = Some(dir);
        self.providers.chat.mode = Some(ProviderMode::Mock);
        self.providers.search.mode = Some(ProviderMode::Mock);
        self.providers.embed.mode = Some(ProviderMode::Mock);
        self
    }

    fn default_mode(&self) -> ProviderMode {
        if self.providers.mock_fixtures.is_some() {
            ProviderMode::Mock
        } else {
            ProviderMode::Live
        }
    }

    fn fixtures_dir(&self, provider: &str) -> Result<&Path> {
        self.providers.mock_fixtures.as_deref().with_context(|| {
            format!("{provider} provider is in mock mode but providers.mock_fixtures is unset")
        })
    }

    fn env_key(&self, name: &str) -> Result<String> {
        std::env::var(name).with_context(|| format!("environment variable {name} is not set"))
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            search_k: self.gateway.search_k,
            excluded_hosts: self.gateway.excluded_hosts.clone(),
            retry: self.gateway.retry.clone(),
            chat_in_flight: self.gateway.chat_in_flight,
            search_in_flight: self.gateway.search_in_flight,
            embed_in_flight: self.gateway.embed_in_flight,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            discovery: DiscoveryConfig {
                exemplar_n: self.discovery.exemplar_n,
                max_iterations: self.discovery.max_iterations,
                max_total_queries: self.discovery.max_total_queries,
                merged_query_cap: self.discovery.merged_query_cap,
                preloaded_attributes: self.discovery.preloaded_attributes.clone(),
            },
            writer: WriterConfig {
                section_ref_k: self.writer.section_ref_k,
                max_parallel: self.writer.max_parallel,
                context_budget_tokens: self.writer.context_budget_tokens,
            },
        }
    }

    /// Gateway for index building: the configured embedder plus inert chat
    /// and search stubs (never invoked during ingestion).
    pub fn build_embed_gateway(&self) -> Result<Gateway> {
        let embed = self.build_embed_provider()?;
        Ok(Gateway::new(
            Arc::new(MockChatProvider::default()),
            Arc::new(MockSearchProvider::default()),
            embed,
            self.gateway_config(),
        ))
    }

    fn build_embed_provider(&self) -> Result<Arc<dyn longform::gateway::EmbedProvider>> {
        Ok(
            match self.providers.embed.mode.unwrap_or_else(|| self.default_mode()) {
                ProviderMode::Mock => Arc::new(match self.providers.embed.dimension {
                    Some(dimension) => MockEmbedProvider { dimension },
                    None => MockEmbedProvider::default(),
                }),
                ProviderMode::Live => {
                    let cfg = &self.providers.embed;
                    let endpoint = cfg
                        .endpoint
                        .clone()
                        .context("providers.embed.endpoint required in live mode")?;
                    let model = cfg
                        .model
                        .clone()
                        .context("providers.embed.model required in live mode")?;
                    let key_env = cfg.api_key_env.as_deref().unwrap_or(DEFAULT_EMBED_KEY_ENV);
                    Arc::new(LiveEmbedProvider::new(endpoint, model, self.env_key(key_env)?))
                }
            },
        )
    }

    /// Builds the gateway with each provider in its configured mode.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let chat: Arc<dyn longform::gateway::ChatProvider> =
            match self.providers.chat.mode.unwrap_or_else(|| self.default_mode()) {
                ProviderMode::Mock => {
                    let dir = self.fixtures_dir("chat")?;
                    Arc::new(
                        MockChatProvider::from_dir(dir)
                            .with_context(|| format!("loading chat fixtures from {}", dir.display()))?,
                    )
                }
                ProviderMode::Live => {
                    let cfg = &self.providers.chat;
                    let endpoint = cfg
                        .endpoint
                        .clone()
                        .context("providers.chat.endpoint required in live mode")?;
                    let model = cfg
                        .model
                        .clone()
                        .context("providers.chat.model required in live mode")?;
                    let key_env = cfg.api_key_env.as_deref().unwrap_or(DEFAULT_LLM_KEY_ENV);
                    Arc::new(LiveChatProvider::new(
                        endpoint,
                        model,
                        self.env_key(key_env)?,
                        cfg.temperature.unwrap_or(0.0),
                    ))
                }
            };

        let search: Arc<dyn longform::gateway::SearchProvider> =
            match self.providers.search.mode.unwrap_or_else(|| self.default_mode()) {
                ProviderMode::Mock => {
                    let dir = self.fixtures_dir("search")?;
                    Arc::new(MockSearchProvider::from_dir(dir).with_context(|| {
                        format!("loading search fixtures from {}", dir.display())
                    })?)
                }
                ProviderMode::Live => {
                    let cfg = &self.providers.search;
                    let endpoint = cfg
                        .endpoint
                        .clone()
                        .context("providers.search.endpoint required in live mode")?;
                    let key_env = cfg.api_key_env.as_deref().unwrap_or(DEFAULT_SEARCH_KEY_ENV);
                    Arc::new(LiveSearchProvider::new(
                        endpoint,
                        self.env_key(key_env)?,
                        cfg.engine_id.clone(),
                    ))
                }
            };

        let embed = self.build_embed_provider()?;
        Ok(Gateway::new(chat, search, embed, self.gateway_config()))
    }

    /// A config with every provider mocked; used when no config file is given.
    pub fn mock_default() -> Self {
        Self::default().with_mock_fixtures(PathBuf::from("fixtures/demo"))
    }
}

/// Topic-to-file-stem convention: lowercased, alphanumerics kept, runs of
/// anything else collapsed to single hyphens.
pub fn slugify(topic: &str) -> String {
    let mut slug = String::with_capacity(topic.len());
    let mut pending_hyphen = false;
    for c in topic.chars() {
        if c.is_alphanumeric() {
            if pending_hyphen && !slug.is_empty() {
                slug.push('-');
            }
            pending_hyphen = false;
            slug.extend(c.to_lowercase());
        } else {
            pending_hyphen = true;
        }
    }
    if slug.is_empty() {
        "topic".to_string()
    } else {
        slug
    }
}
