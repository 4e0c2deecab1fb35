//! Outline-exemplar corpus: ingest records extracted from a structured
//! article dump, embed topic texts, persist a versioned index, and retrieve
//! the most similar topics with their outlines as few-shot context.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::outline::{normalize_title, parse_outline, Outline};

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// How many exemplars retrieval returns by default.
pub const DEFAULT_EXEMPLAR_N: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no usable records")]
    EmptyCorpus,
    #[error("index format version {found} unsupported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("query embedding dimension {query} does not match index dimension {index} (index built with {embedder_id})")]
    EmbedderMismatch {
        query: usize,
        index: usize,
        embedder_id: String,
    },
    #[error("index io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One line of the corpus input stream (JSON Lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub title: String,
    pub outline_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineExemplar {
    pub topic: String,
    pub outline: Outline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub format_version: u32,
    pub embedder_id: String,
    pub record_count: usize,
    pub skipped_count: usize,
    /// Optional build timestamp. Left unset by default so rebuilding from
    /// identical inputs produces a byte-identical index file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub metadata: IndexMetadata,
    pub exemplars: Vec<OutlineExemplar>,
    pub vectors: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub ingested: usize,
    pub skipped_unparseable: usize,
    pub filtered_out: usize,
}

/// Text embedded for an exemplar: the topic, disambiguated by its summary
/// when one is present.
fn exemplar_embed_text(topic: &str, summary: Option<&str>) -> String {
    match summary {
        Some(s) if !s.trim().is_empty() => format!("{} {}", topic.trim(), s.trim()),
        _ => topic.trim().to_string(),
    }
}

/// Builds an index from a record stream. Records whose outline text does
/// not parse are skipped and counted; an optional caller-provided predicate
/// filters records before parsing. Deterministic given input order.
pub async fn ingest_corpus(
    gateway: &Gateway,
    records: impl IntoIterator<Item = CorpusRecord>,
    filter: Option<&(dyn Fn(&CorpusRecord) -> bool + Sync)>,
    built_at_unix: Option<u64>,
) -> Result<(CorpusIndex, IngestStats), CorpusError> {
    let mut stats = IngestStats::default();
    let mut exemplars = Vec::new();
    let mut texts = Vec::new();
    for record in records {
        if let Some(pred) = filter {
            if !pred(&record) {
                stats.filtered_out += 1;
                continue;
            }
        }
        let outline = match parse_outline(&record.outline_text) {
            Ok(o) => o,
            Err(_) => {
                stats.skipped_unparseable += 1;
                continue;
            }
        };
        texts.push(exemplar_embed_text(&record.title, record.summary.as_deref()));
        exemplars.push(OutlineExemplar {
            topic: record.title,
            outline,
            summary: record.summary,
        });
    }
    if exemplars.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    stats.ingested = exemplars.len();

    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(256) {
        vectors.extend(gateway.embed(chunk).await?);
    }

    let index = CorpusIndex {
        metadata: IndexMetadata {
            format_version: INDEX_FORMAT_VERSION,
            embedder_id: gateway.embedder_id(),
            record_count: exemplars.len(),
            skipped_count: stats.skipped_unparseable,
            built_at_unix,
        },
        exemplars,
        vectors,
    };
    Ok((index, stats))
}

/// Reads a JSON Lines corpus file into records, skipping blank lines.
pub fn read_corpus_file(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

impl CorpusIndex {
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path)?;
        let index: CorpusIndex = serde_json::from_slice(&bytes)?;
        if index.metadata.format_version != INDEX_FORMAT_VERSION {
            return Err(CorpusError::UnsupportedVersion {
                found: index.metadata.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Returns the `n` exemplars most similar to the topic+brief query by
    /// exhaustive cosine scan. Ties break by ingestion order, and an
    /// exemplar whose normalized topic equals the query topic is excluded
    /// so the target article never leaks into its own few-shot context.
    pub async fn retrieve_exemplars(
        &self,
        gateway: &Gateway,
        topic: &str,
        brief: &str,
        n: usize,
    ) -> Result<Vec<(String, Outline)>, CorpusError> {
        if self.exemplars.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let query = exemplar_embed_text(topic, Some(brief));
        let query_vec = gateway
            .embed(std::slice::from_ref(&query))
            .await?
            .into_iter()
            .next()
            .expect("one vector per text");
        if let Some(first) = self.vectors.first() {
            if first.values.len() != query_vec.values.len() {
                return Err(CorpusError::EmbedderMismatch {
                    query: query_vec.values.len(),
                    index: first.values.len(),
                    embedder_id: self.metadata.embedder_id.clone(),
                });
            }
        }
        let topic_key = normalize_title(topic);

        let mut scored: Vec<(usize, f64)> = self
            .exemplars
            .iter()
            .enumerate()
            .filter(|(_, ex)| normalize_title(&ex.topic) != topic_key)
            .map(|(i, _)| (i, query_vec.cosine(&self.vectors[i])))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(i, _)| {
                let ex = &self.exemplars[i];
                (ex.topic.clone(), ex.outline.clone())
            })
            .collect())
    }
}
