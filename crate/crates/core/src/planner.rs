//! Writing plan: a DAG over first-level sections stating which sections must
//! be generated before which, plus the wave schedule derived from its
//! topological order and the plan's graph metrics.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, TemplateId, DEFAULT_PLAN_EXAMPLE};
use crate::outline::{first_level_sections, normalize_title, render_outline, Outline};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no plan line could be parsed")]
    ParseFailure,
    #[error("plan contains a dependency cycle")]
    Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    Llm,
    FallbackParallel,
}

/// Edge `(from, to)` means `from` must be generated before `to`. Nodes are
/// section titles in outline order; edges index into `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingPlan {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub origin: PlanOrigin,
}

impl WritingPlan {
    /// The edgeless plan: every section independent, one generation wave.
    pub fn fallback(nodes: Vec<String>) -> Self {
        Self {
            nodes,
            edges: Vec::new(),
            origin: PlanOrigin::FallbackParallel,
        }
    }

    pub fn is_acyclic(&self) -> bool {
        kahn_order(self).is_some()
    }

    /// Titles of the direct predecessors of `title` in outline order.
    pub fn dependencies_of(&self, title: &str) -> Vec<String> {
        let key = normalize_title(title);
        let Some(target) = self
            .nodes
            .iter()
            .position(|n| normalize_title(n) == key)
        else {
            return Vec::new();
        };
        let mut deps: Vec<usize> = self
            .edges
            .iter()
            .filter(|(_, to)| *to == target)
            .map(|(from, _)| *from)
            .collect();
        deps.sort_unstable();
        deps.dedup();
        deps.into_iter().map(|i| self.nodes[i].clone()).collect()
    }

    pub fn edges_by_title(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|(f, t)| (self.nodes[*f].clone(), self.nodes[*t].clone()))
            .collect()
    }
}

/// Kahn topological order over node indices, or None when cyclic.
fn kahn_order(plan: &WritingPlan) -> Option<Vec<usize>> {
    let n = plan.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in &plan.edges {
        indegree[*to] += 1;
        out[*from].push(*to);
    }
    let mut frontier: Vec<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(node) = frontier.pop() {
        order.push(node);
        for &next in &out[node] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                frontier.push(next);
            }
        }
    }
    (order.len() == n).then_some(order)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanParseStats {
    pub parsed_lines: usize,
    pub skipped_lines: usize,
    pub dropped_unknown_titles: usize,
    pub dropped_self_edges: usize,
}

/// Edges recovered from an LLM plan reply, before acyclicity validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlanText {
    pub edges: Vec<(usize, usize)>,
    pub stats: PlanParseStats,
}

/// Parses a plan reply against the known section titles. Two line grammars
/// are accepted and canonicalized:
///
/// * `S <- D1 <- D2` — D1 and D2 must be generated before S;
/// * `S: T1, T2` — S must be generated before T1 and T2.
///
/// `None` contributes no edge. Titles are matched after normalization;
/// unknown titles are dropped and counted. Fails only when no line matches
/// either grammar.
pub fn parse_plan(text: &str, sections: &[String]) -> Result<ParsedPlanText, PlanError> {
    let lookup: HashMap<String, usize> = sections
        .iter()
        .enumerate()
        .map(|(i, s)| (normalize_title(s), i))
        .collect();
    let mut stats = PlanParseStats::default();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();

    let resolve = |raw: &str, stats: &mut PlanParseStats| -> Option<Option<usize>> {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("none") {
            return Some(None);
        }
        match lookup.get(&normalize_title(trimmed)) {
            Some(&idx) => Some(Some(idx)),
            None => {
                stats.dropped_unknown_titles += 1;
                None
            }
        }
    };

    for raw in text.lines() {
        let line = raw.trim().trim_start_matches('-').trim();
        if line.is_empty() {
            continue;
        }
        if line.contains("<-") {
            stats.parsed_lines += 1;
            let mut parts = line.split("<-");
            let head = parts.next().unwrap_or_default();
            let Some(Some(section)) = resolve(head, &mut stats) else {
                // Unknown or empty head: the line's edges all involve it, so
                // nothing can be kept.
                continue;
            };
            for dep in parts {
                if let Some(Some(dep_idx)) = resolve(dep, &mut stats) {
                    if dep_idx == section {
                        stats.dropped_self_edges += 1;
                    } else {
                        edges.insert((dep_idx, section));
                    }
                }
            }
        } else if let Some((head, tail)) = line.split_once(':') {
            stats.parsed_lines += 1;
            let Some(Some(section)) = resolve(head, &mut stats) else {
                continue;
            };
            for target in tail.split(',') {
                if let Some(Some(target_idx)) = resolve(target, &mut stats) {
                    if target_idx == section {
                        stats.dropped_self_edges += 1;
                    } else {
                        edges.insert((section, target_idx));
                    }
                }
            }
        } else {
            stats.skipped_lines += 1;
        }
    }

    if stats.parsed_lines == 0 {
        return Err(PlanError::ParseFailure);
    }
    Ok(ParsedPlanText {
        edges: edges.into_iter().collect(),
        stats,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanGenReport {
    pub origin: Option<PlanOrigin>,
    pub fallback_reason: Option<String>,
    pub parse_stats: PlanParseStats,
}

/// Asks the LLM for a writing plan over the outline's first-level sections.
/// A reply that fails to parse or forms a cycle yields the fallback plan
/// that generates every section in parallel.
pub async fn generate_plan(
    gateway: &Gateway,
    topic: &str,
    outline: &Outline,
) -> Result<(WritingPlan, PlanGenReport, crate::gateway::TranscriptEntry), crate::gateway::GatewayError> {
    let sections = first_level_sections(outline);
    let bindings = std::collections::BTreeMap::from([
        ("example".to_string(), DEFAULT_PLAN_EXAMPLE.to_string()),
        ("topic".to_string(), topic.to_string()),
        ("outline".to_string(), render_outline(outline)),
    ]);
    let done = gateway.complete(TemplateId::PlanGeneration, None, &bindings).await?;

    let mut report = PlanGenReport::default();
    let plan = match parse_plan(&done.reply, &sections) {
        Ok(parsed) => {
            report.parse_stats = parsed.stats.clone();
            let candidate = WritingPlan {
                nodes: sections.clone(),
                edges: parsed.edges,
                origin: PlanOrigin::Llm,
            };
            if candidate.is_acyclic() {
                candidate
            } else {
                report.fallback_reason = Some("plan reply formed a cycle".to_string());
                WritingPlan::fallback(sections)
            }
        }
        Err(PlanError::ParseFailure) => {
            report.fallback_reason = Some("plan reply did not parse".to_string());
            WritingPlan::fallback(sections)
        }
        Err(PlanError::Cycle) => unreachable!("parse_plan does not detect cycles"),
    };
    report.origin = Some(plan.origin);
    Ok((plan, report, done.transcript))
}

/// Waves of section titles; every dependency of a title lies in a strictly
/// earlier wave. Execution batches within a wave are capped at
/// `max_parallel` by the writer's executor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub waves: Vec<Vec<String>>,
    pub max_parallel: usize,
}

/// Kahn layering: wave i holds every node whose dependencies all completed
/// by wave i-1. Nodes within a wave keep outline order.
pub fn topological_schedule(plan: &WritingPlan, max_parallel: usize) -> Result<Schedule, PlanError> {
    let n = plan.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in &plan.edges {
        indegree[*to] += 1;
        out[*from].push(*to);
    }
    let mut current: Vec<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut waves = Vec::new();
    let mut placed = 0;
    while !current.is_empty() {
        current.sort_unstable();
        let mut next = Vec::new();
        for &node in &current {
            for &succ in &out[node] {
                indegree[succ] -= 1;
                if indegree[succ] == 0 {
                    next.push(succ);
                }
            }
        }
        placed += current.len();
        waves.push(current.iter().map(|&i| plan.nodes[i].clone()).collect());
        current = next;
    }
    if placed != n {
        return Err(PlanError::Cycle);
    }
    Ok(Schedule {
        waves,
        max_parallel: max_parallel.max(1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub node_count: usize,
    pub edge_count: usize,
    /// |E| / (n - 1); 0 when the plan has at most one node. A linear chain
    /// scores exactly 1.0.
    pub dependency_density: f64,
    /// Maximum edge count along any directed path.
    pub longest_path: usize,
}

pub fn plan_metrics(plan: &WritingPlan) -> Result<PlanMetrics, PlanError> {
    let n = plan.nodes.len();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in &plan.edges {
        incoming[*to].push(*from);
    }
    // Longest path by dynamic programming over a topological order.
    let mut depth = vec![0usize; n];
    let forward = topologically_sorted(plan).ok_or(PlanError::Cycle)?;
    for &node in &forward {
        depth[node] = incoming[node]
            .iter()
            .map(|&p| depth[p] + 1)
            .max()
            .unwrap_or(0);
    }
    let density = if n >= 2 {
        plan.edges.len() as f64 / (n as f64 - 1.0)
    } else {
        0.0
    };
    Ok(PlanMetrics {
        node_count: n,
        edge_count: plan.edges.len(),
        dependency_density: density,
        longest_path: depth.into_iter().max().unwrap_or(0),
    })
}

fn topologically_sorted(plan: &WritingPlan) -> Option<Vec<usize>> {
    let n = plan.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in &plan.edges {
        indegree[*to] += 1;
        out[*from].push(*to);
    }
    let mut queue: std::collections::VecDeque<usize> =
        (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(node) = queue.pop_front() {
        order.push(node);
        for &succ in &out[node] {
            indegree[succ] -= 1;
            if indegree[succ] == 0 {
                queue.push_back(succ);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// A linear chain over the given titles, mostly useful in tests and the
/// density baseline: density(chain) == 1.0.
pub fn chain_plan(titles: Vec<String>) -> WritingPlan {
    let edges = (1..titles.len()).map(|i| (i - 1, i)).collect();
    WritingPlan {
        nodes: titles,
        edges,
        origin: PlanOrigin::Llm,
    }
}
