//! Subcommand implementations. Exit codes are a stable contract: 0 on
//! success, 1 on fatal error, 2 when `generate` produced a partial article.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use longform::corpus::{ingest_corpus, read_corpus_file, CorpusIndex};
use longform::evalkit::{
    aggregate_plan_stats, f1_at_k, outline_f1, FactualityInput, PlanStatsSummary, DEFAULT_F1_AT_K,
};
use longform::outline::parse_outline;
use longform::pipeline::PlanSidecar;
use longform::planner::PlanMetrics;
use longform::run_pipeline;

use crate::config::{slugify, RunConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_build_index(config: &RunConfig, corpus: &Path, out: &Path) -> Result<i32> {
    let records = read_corpus_file(corpus)
        .with_context(|| format!("reading corpus {}", corpus.display()))?;
    if records.is_empty() {
        eprintln!("error: corpus contains no records");
        return Ok(1);
    }
    let gateway = config.build_embed_gateway()?;
    let runtime = tokio::runtime::Runtime::new()?;
    let outcome = runtime.block_on(ingest_corpus(&gateway, records, None, None));
    match outcome {
        Ok((index, stats)) => {
            index.save(out)?;
            println!(
                "{} ingested, {} skipped -> {}",
                stats.ingested,
                stats.skipped_unparseable,
                out.display()
            );
            Ok(0)
        }
        Err(longform::corpus::CorpusError::EmptyCorpus) => {
            eprintln!("error: corpus contains no usable records");
            Ok(1)
        }
        Err(err) => Err(err.into()),
    }
}

/// Written next to the article so `plan-stats` can aggregate runs.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRecord {
    pub topic: String,
    #[serde(flatten)]
    pub plan: PlanSidecar,
}

pub fn cmd_generate(config: &RunConfig, topic: &str, out_dir: &Path) -> Result<i32> {
    let index = match &config.paths.index {
        Some(path) => Some(
            CorpusIndex::load(path)
                .with_context(|| format!("loading corpus index {}", path.display()))?,
        ),
        None => None,
    };
    let gateway = config.build_gateway()?;
    let pipeline_config = config.pipeline_config();
    let runtime = tokio::runtime::Runtime::new()?;
    let output = match runtime.block_on(run_pipeline(
        &gateway,
        index.as_ref(),
        topic,
        &pipeline_config,
    )) {
        Ok(output) => output,
        Err(err) => {
            eprintln!("error: {err}");
            return Ok(1);
        }
    };

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let slug = slugify(topic);
    std::fs::write(out_dir.join(format!("{slug}.md")), &output.markdown)?;
    write_json(&out_dir.join(format!("{slug}.sidecar.json")), &output.sidecar)?;
    write_json(&out_dir.join(format!("{slug}.report.json")), &output.discovery_report)?;
    write_json(
        &out_dir.join(format!("{slug}.plan.json")),
        &PlanRecord {
            topic: topic.to_string(),
            plan: output.sidecar.plan.clone(),
        },
    )?;
    write_json(&out_dir.join(format!("{slug}.cost.json")), &output.cost)?;

    println!(
        "wrote {slug}.md ({} sections, {} references, {} llm calls)",
        output.article.sections.len(),
        output.article.bibliography.len(),
        output.cost.llm_calls
    );
    if output.article.partial {
        eprintln!("warning: article is partial; placeholder sections present");
        return Ok(2);
    }
    Ok(0)
}

#[derive(Debug, Clone, Deserialize)]
struct FactualityRecord {
    precision: f64,
    claim_count: u64,
    #[serde(default)]
    supported_count: Option<u64>,
}

#[derive(Debug, Serialize)]
struct TopicEvalRow {
    slug: String,
    recall: f64,
    precision: f64,
    f1: f64,
    matched_titles: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1_at_300: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalAggregate {
    topic_count: usize,
    mean_recall: f64,
    mean_precision: f64,
    mean_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_f1_at_300: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    topics: Vec<TopicEvalRow>,
    aggregate: EvalAggregate,
}

/// Drops a trailing `## References` block so article files compare as
/// outlines.
fn strip_references_section(text: &str) -> String {
    match text.lines().position(|line| line.trim() == "## References") {
        Some(idx) => text.lines().take(idx).collect::<Vec<_>>().join("\n"),
        None => text.to_string(),
    }
}

fn markdown_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("md") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn cmd_eval(
    generated_dir: &Path,
    gold_dir: &Path,
    factuality: Option<&Path>,
    out: Option<&Path>,
) -> Result<i32> {
    let factuality_records: BTreeMap<String, FactualityRecord> = match factuality {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading factuality records {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing factuality records {}", path.display()))?
        }
        None => BTreeMap::new(),
    };

    let mut rows = Vec::new();
    for stem in markdown_stems(generated_dir)? {
        let gold_path = gold_dir.join(format!("{stem}.md"));
        if !gold_path.exists() {
            eprintln!("warning: no gold outline for {stem}, skipped");
            continue;
        }
        let generated_text =
            strip_references_section(&std::fs::read_to_string(generated_dir.join(format!("{stem}.md")))?);
        let gold_text = strip_references_section(&std::fs::read_to_string(&gold_path)?);
        let generated = match parse_outline(&generated_text) {
            Ok(o) => o,
            Err(err) => {
                eprintln!("warning: {stem}: generated file has no headings ({err}), skipped");
                continue;
            }
        };
        let gold = match parse_outline(&gold_text) {
            Ok(o) => o,
            Err(err) => {
                eprintln!("warning: {stem}: gold file has no headings ({err}), skipped");
                continue;
            }
        };
        let score = outline_f1(&generated, &gold)?;
        let f1_at_300 = factuality_records.get(&stem).map(|r| {
            let input = match r.supported_count {
                Some(supported) => FactualityInput::new(r.precision, r.claim_count, supported),
                None => FactualityInput::from_precision_and_claims(r.precision, r.claim_count),
            };
            f1_at_k(&input, DEFAULT_F1_AT_K)
        });
        rows.push(TopicEvalRow {
            slug: stem,
            recall: score.recall,
            precision: score.precision,
            f1: score.f1,
            matched_titles: score.matched.len(),
            f1_at_300,
        });
    }

    if rows.is_empty() {
        eprintln!("error: no generated/gold topic pairs matched");
        return Ok(1);
    }

    let n = rows.len() as f64;
    let with_fact: Vec<f64> = rows.iter().filter_map(|r| r.f1_at_300).collect();
    let aggregate = EvalAggregate {
        topic_count: rows.len(),
        mean_recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        mean_precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        mean_f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        mean_f1_at_300: if with_fact.is_empty() {
            None
        } else {
            Some(with_fact.iter().sum::<f64>() / with_fact.len() as f64)
        },
    };

    println!(
        "{:<32} {:>8} {:>10} {:>8} {:>8}",
        "topic", "recall", "precision", "f1", "f1@300"
    );
    for row in &rows {
        println!(
            "{:<32} {:>8.4} {:>10.4} {:>8.4} {:>8}",
            row.slug,
            row.recall,
            row.precision,
            row.f1,
            row.f1_at_300
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".to_string())
        );
    }
    println!(
        "{:<32} {:>8.4} {:>10.4} {:>8.4} {:>8}",
        format!("mean ({} topics)", aggregate.topic_count),
        aggregate.mean_recall,
        aggregate.mean_precision,
        aggregate.mean_f1,
        aggregate
            .mean_f1_at_300
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".to_string())
    );

    let report = EvalReport { topics: rows, aggregate };
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(0)
}

#[derive(Debug, Deserialize)]
struct PlanRecordMetrics {
    topic: String,
    metrics: PlanMetrics,
}

#[derive(Debug, Serialize)]
struct PlanStatsReport {
    plans: Vec<PlanRow>,
    aggregate: PlanStatsSummary,
}

#[derive(Debug, Serialize)]
struct PlanRow {
    topic: String,
    #[serde(flatten)]
    metrics: PlanMetrics,
}

pub fn cmd_plan_stats(run_dir: &Path, out: Option<&Path>) -> Result<i32> {
    let mut paths: Vec<_> = std::fs::read_dir(run_dir)
        .with_context(|| format!("reading {}", run_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.ends_with(".plan.json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();

    let mut rows = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)?;
        let record: PlanRecordMetrics = serde_json::from_str(&text)
            .with_context(|| format!("parsing plan record {}", path.display()))?;
        rows.push(PlanRow {
            topic: record.topic,
            metrics: record.metrics,
        });
    }
    if rows.is_empty() {
        eprintln!("error: no *.plan.json files found in {}", run_dir.display());
        return Ok(1);
    }

    let metrics: Vec<PlanMetrics> = rows.iter().map(|r| r.metrics.clone()).collect();
    let aggregate = aggregate_plan_stats(&metrics)?;

    println!(
        "{:<32} {:>6} {:>6} {:>9} {:>13}",
        "topic", "nodes", "edges", "density", "longest path"
    );
    for row in &rows {
        println!(
            "{:<32} {:>6} {:>6} {:>9.4} {:>13}",
            row.topic,
            row.metrics.node_count,
            row.metrics.edge_count,
            row.metrics.dependency_density,
            row.metrics.longest_path
        );
    }
    println!(
        "{:<32} {:>6.2} {:>6.2} {:>9.4} {:>13.2}",
        format!("mean ({} plans)", aggregate.plan_count),
        aggregate.mean_nodes,
        aggregate.mean_edges,
        aggregate.mean_density,
        aggregate.mean_longest_path
    );

    let report = PlanStatsReport { plans: rows, aggregate };
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(0)
}
