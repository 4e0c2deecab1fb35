//! End-to-end driver: discovery, plan generation, plan-guided writing, and
//! the run artifacts (article markdown, sidecar, reports). Everything
//! serialized here is deterministic given the providers' behavior; wall
//! times live only in the cost report.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::discovery::{discovery_loop, DiscoveryConfig, DiscoveryFailure, DiscoveryReport};
use crate::evalkit::{info_diversity, CostReport};
use crate::gateway::{Gateway, TranscriptEntry};
use crate::outline::{first_level_sections, render_outline};
use crate::planner::{generate_plan, plan_metrics, PlanGenReport, PlanMetrics, PlanOrigin, WritingPlan};
use crate::writer::{
    generate_article, render_article_markdown, Article, BibEntry, Citation, WriterConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("discovery failed: {0}")]
    Discovery(#[from] Box<DiscoveryFailure>),
    #[error(transparent)]
    Writer(#[from] crate::writer::WriterError),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub discovery: DiscoveryConfig,
    pub writer: WriterConfig,
}

/// Machine-readable sidecar accompanying the article markdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleSidecar {
    pub topic: String,
    pub brief: String,
    pub final_outline: String,
    pub first_level_sections: Vec<String>,
    pub plan: PlanSidecar,
    pub schedule_waves: Vec<Vec<String>>,
    pub sections: Vec<SectionSidecar>,
    pub bibliography: Vec<BibEntry>,
    pub partial: bool,
    pub info_diversity: Option<f64>,
    pub info_diversity_formula: String,
    pub settings: RunSettings,
    pub flags: Vec<String>,
    pub transcript: Vec<TranscriptEntry>,
}

/// Effective knobs for the run, echoed so reports are self-describing
/// (several defaults are this implementation's choices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub search_k: usize,
    pub excluded_hosts: Vec<String>,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub exemplar_n: usize,
    pub max_iterations: usize,
    pub max_total_queries: usize,
    pub merged_query_cap: usize,
    pub section_ref_k: usize,
    pub max_parallel: usize,
    pub context_budget_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub origin: PlanOrigin,
    pub metrics: PlanMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSidecar {
    pub title: String,
    pub body: String,
    pub citations: Vec<Citation>,
    pub used_dependencies: Vec<String>,
    pub warnings: Vec<String>,
    pub placeholder: bool,
}

pub struct PipelineOutput {
    pub article: Article,
    pub markdown: String,
    pub sidecar: ArticleSidecar,
    pub discovery_report: DiscoveryReport,
    pub plan: WritingPlan,
    pub plan_report: PlanGenReport,
    pub plan_metrics: PlanMetrics,
    pub cost: CostReport,
}

/// Runs the full pipeline for one topic. The writing-plan stage never
/// aborts the run (it falls back to the parallel plan); discovery errors
/// and a fully failed writer do.
pub async fn run_pipeline(
    gateway: &Gateway,
    index: Option<&CorpusIndex>,
    topic: &str,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let mut stage_wall_ms: BTreeMap<String, u64> = BTreeMap::new();
    let mut transcript: Vec<TranscriptEntry> = Vec::new();

    let started = Instant::now();
    let discovery = discovery_loop(gateway, index, topic, &config.discovery).await?;
    stage_wall_ms.insert("discovery".to_string(), started.elapsed().as_millis() as u64);
    transcript.extend(discovery.transcript);

    let started = Instant::now();
    let (plan, plan_report, plan_entry) = generate_plan(gateway, topic, &discovery.outline).await?;
    stage_wall_ms.insert("plan".to_string(), started.elapsed().as_millis() as u64);
    transcript.push(plan_entry);
    let metrics = plan_metrics(&plan)?;

    let started = Instant::now();
    let outcome = generate_article(
        gateway,
        topic,
        &discovery.outline,
        &plan,
        &discovery.store,
        &config.writer,
    )
    .await?;
    stage_wall_ms.insert("writing".to_string(), started.elapsed().as_millis() as u64);
    transcript.extend(outcome.transcript);

    // Diversity of the gathered references; needs at least two.
    let reference_texts: Vec<String> = discovery
        .store
        .iter()
        .map(|(_, r)| format!("{} {}", r.title, r.snippet))
        .collect();
    let diversity = if reference_texts.len() >= 2 {
        Some(info_diversity(gateway, &reference_texts).await.map_err(
            |err| match err {
                crate::evalkit::EvalError::Gateway(g) => PipelineError::Gateway(g),
                other => unreachable!("diversity over >=2 texts cannot fail with {other}"),
            },
        )?)
    } else {
        None
    };

    let mut flags = discovery.report.flags.clone();
    if let Some(reason) = &plan_report.fallback_reason {
        flags.push(format!("plan fallback: {reason}"));
    }
    if outcome.article.partial {
        flags.push("partial article: one or more sections are placeholders".to_string());
    }

    let markdown = render_article_markdown(&outcome.article);
    let sidecar = ArticleSidecar {
        topic: topic.to_string(),
        brief: discovery.brief.text.clone(),
        final_outline: render_outline(&discovery.outline),
        first_level_sections: first_level_sections(&discovery.outline),
        plan: PlanSidecar {
            nodes: plan.nodes.clone(),
            edges: plan.edges_by_title(),
            origin: plan.origin,
            metrics: metrics.clone(),
        },
        schedule_waves: outcome.schedule.waves.clone(),
        sections: outcome
            .article
            .sections
            .iter()
            .map(|s| SectionSidecar {
                title: s.title.clone(),
                body: s.body.clone(),
                citations: s.citations.clone(),
                used_dependencies: s.used_dependencies.clone(),
                warnings: s.warnings.clone(),
                placeholder: s.placeholder,
            })
            .collect(),
        bibliography: outcome.article.bibliography.clone(),
        partial: outcome.article.partial,
        info_diversity: diversity,
        info_diversity_formula: crate::evalkit::INFO_DIVERSITY_FORMULA.to_string(),
        settings: RunSettings {
            search_k: gateway.config().search_k,
            excluded_hosts: gateway.config().excluded_hosts.clone(),
            retry_attempts: gateway.config().retry.attempts,
            retry_base_delay_ms: gateway.config().retry.base_delay_ms,
            exemplar_n: config.discovery.exemplar_n,
            max_iterations: config.discovery.max_iterations,
            max_total_queries: config.discovery.max_total_queries,
            merged_query_cap: config.discovery.merged_query_cap,
            section_ref_k: config.writer.section_ref_k,
            max_parallel: config.writer.max_parallel,
            context_budget_tokens: config.writer.context_budget_tokens,
        },
        flags,
        transcript,
    };

    let cost = CostReport::from_counter(&gateway.counter().snapshot(), stage_wall_ms);

    Ok(PipelineOutput {
        markdown,
        sidecar,
        discovery_report: discovery.report,
        plan_metrics: metrics,
        plan_report,
        plan,
        cost,
        article: outcome.article,
    })
}
