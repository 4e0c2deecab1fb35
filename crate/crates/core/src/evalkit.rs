//! Evaluation surface: outline string-match F1, factuality F1@K
//! composition, info diversity over gathered references, plan-metric
//! aggregation, and the pipeline cost report.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CounterSnapshot, Gateway, GatewayError};
use crate::outline::{normalize_title, Outline};
use crate::planner::PlanMetrics;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold outline has no titles; score undefined")]
    UndefinedGold,
    #[error("info diversity needs at least two texts")]
    FewerThanTwo,
    #[error("cannot aggregate an empty metrics list")]
    EmptyList,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Matched (generated, gold) title pairs in document order.
    pub matched: Vec<(String, String)>,
}

/// Direct string matching between generated and gold section titles at all
/// levels, after normalization. Matching is multiset intersection, so a
/// repeated gold heading counts once per occurrence.
pub fn outline_f1(generated: &Outline, gold: &Outline) -> Result<OutlineScore, EvalError> {
    let gold_titles = gold.all_titles();
    if gold_titles.is_empty() {
        return Err(EvalError::UndefinedGold);
    }
    let generated_titles = generated.all_titles();

    let mut gold_pool: HashMap<String, std::collections::VecDeque<&str>> = HashMap::new();
    for title in &gold_titles {
        gold_pool
            .entry(normalize_title(title))
            .or_default()
            .push_back(title);
    }

    let mut matched = Vec::new();
    for title in &generated_titles {
        if let Some(pool) = gold_pool.get_mut(&normalize_title(title)) {
            if let Some(gold_title) = pool.pop_front() {
                matched.push((title.to_string(), gold_title.to_string()));
            }
        }
    }

    let match_count = matched.len() as f64;
    let recall = match_count / gold_titles.len() as f64;
    let precision = if generated_titles.is_empty() {
        0.0
    } else {
        match_count / generated_titles.len() as f64
    };
    Ok(OutlineScore {
        recall,
        precision,
        f1: harmonic_mean(precision, recall),
        matched,
    })
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// FActScore-style inputs consumed from external tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityInput {
    /// Fraction of atomic claims judged supported, in [0, 1].
    pub precision: f64,
    pub claim_count: u64,
    pub supported_count: u64,
}

impl FactualityInput {
    pub fn new(precision: f64, claim_count: u64, supported_count: u64) -> Self {
        Self {
            precision: precision.clamp(0.0, 1.0),
            claim_count,
            supported_count: supported_count.min(claim_count),
        }
    }

    /// When only precision and the claim total are reported, the supported
    /// count is taken as precision × claims, rounded to nearest.
    pub fn from_precision_and_claims(precision: f64, claim_count: u64) -> Self {
        let precision = precision.clamp(0.0, 1.0);
        let supported = (precision * claim_count as f64).round() as u64;
        Self::new(precision, claim_count, supported)
    }
}

pub const DEFAULT_F1_AT_K: u64 = 300;

/// Harmonic mean of factual precision and recall@K, where
/// recall@K = min(supported / K, 1). Articles with few supported claims are
/// penalized; recall saturates once supported reaches K.
pub fn f1_at_k(input: &FactualityInput, k: u64) -> f64 {
    let k = k.max(1);
    let recall = (input.supported_count as f64 / k as f64).min(1.0);
    harmonic_mean(input.precision, recall)
}

pub const INFO_DIVERSITY_FORMULA: &str = "1 - mean pairwise cosine similarity";

/// One minus the mean pairwise cosine similarity of the embedded texts,
/// clipped to [0, 1]. Higher means the gathered information is broader.
pub async fn info_diversity(gateway: &Gateway, texts: &[String]) -> Result<f64, EvalError> {
    if texts.len() < 2 {
        return Err(EvalError::FewerThanTwo);
    }
    let vectors = gateway.embed(texts).await?;
    let mut total = 0.0;
    let mut pairs = 0u64;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            total += vectors[i].cosine(&vectors[j]);
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStatsSummary {
    pub plan_count: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub mean_density: f64,
    pub mean_longest_path: f64,
}

pub fn aggregate_plan_stats(metrics: &[PlanMetrics]) -> Result<PlanStatsSummary, EvalError> {
    if metrics.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let n = metrics.len() as f64;
    Ok(PlanStatsSummary {
        plan_count: metrics.len(),
        mean_nodes: metrics.iter().map(|m| m.node_count as f64).sum::<f64>() / n,
        mean_edges: metrics.iter().map(|m| m.edge_count as f64).sum::<f64>() / n,
        mean_density: metrics.iter().map(|m| m.dependency_density).sum::<f64>() / n,
        mean_longest_path: metrics.iter().map(|m| m.longest_path as f64).sum::<f64>() / n,
    })
}

/// Per-run usage totals; `llm_calls` always equals the gateway counter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub llm_calls: u64,
    pub search_calls: u64,
    pub embed_calls: u64,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub per_template_calls: BTreeMap<String, u64>,
    pub stage_wall_ms: BTreeMap<String, u64>,
}

impl CostReport {
    pub fn from_counter(snapshot: &CounterSnapshot, stage_wall_ms: BTreeMap<String, u64>) -> Self {
        Self {
            llm_calls: snapshot.chat_calls,
            search_calls: snapshot.search_calls,
            embed_calls: snapshot.embed_calls,
            prompt_tokens: snapshot.prompt_tokens,
            reply_tokens: snapshot.reply_tokens,
            per_template_calls: snapshot.per_template.clone(),
            stage_wall_ms,
        }
    }
}
