//! Plan-guided article generation: per-section reference retrieval,
//! dependency-aware section writing with inline citations, bounded-parallel
//! wave execution, assembly in outline order, and global citation
//! renumbering.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::discovery::ReferenceStore;
use crate::gateway::{estimate_tokens, Gateway, GatewayError, TemplateId, TranscriptEntry};
use crate::outline::{first_level_sections, normalize_title, render_outline, Outline, SectionNode};
use crate::planner::{topological_schedule, Schedule, WritingPlan};

#[derive(Debug, Error)]
pub enum WriterError {
    #[error("reference store is empty; nothing to retrieve for sections")]
    EmptyStore,
    #[error("plan nodes do not match the outline's first-level sections")]
    PlanOutlineMismatch,
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One store reference handed to the section writer, numbered by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedReference {
    /// Stable id in the reference store.
    pub id: usize,
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// One inline citation: the marker as it appears in the body, and the
/// reference it resolves to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub marker: usize,
    pub ref_id: usize,
    pub url: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDraft {
    pub title: String,
    /// Markdown body starting at `# title`, with inline `[i]` markers.
    pub body: String,
    /// Ordered map from inline marker to cited reference.
    pub citations: Vec<Citation>,
    /// Dependency sections whose bodies were provided as context.
    pub used_dependencies: Vec<String>,
    pub warnings: Vec<String>,
    pub placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub id: usize,
    pub url: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub topic: String,
    /// Section drafts in outline order with globally renumbered markers.
    pub sections: Vec<SectionDraft>,
    /// Global ids are dense 1..=N in order of first appearance.
    pub bibliography: Vec<BibEntry>,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterConfig {
    /// References retrieved per section.
    pub section_ref_k: usize,
    /// Concurrent section generations allowed.
    pub max_parallel: usize,
    /// Whitespace-token budget for dependency-section context.
    pub context_budget_tokens: usize,
}

impl Default for WriterConfig {
    fn default() -> Self {
        Self {
            section_ref_k: 10,
            max_parallel: 3,
            context_budget_tokens: 4000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriterStats {
    /// Highest number of section generations observed in flight.
    pub peak_concurrency: usize,
    /// Section spawn order: wave by wave, outline order within a wave.
    pub generation_order: Vec<String>,
    pub placeholder_sections: Vec<String>,
}

#[derive(Debug)]
pub struct WriterOutcome {
    pub article: Article,
    pub schedule: Schedule,
    pub stats: WriterStats,
    pub transcript: Vec<TranscriptEntry>,
}

/// Tracks concurrent section generations and remembers the peak.
#[derive(Debug, Default)]
struct ConcurrencyGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

struct GaugeGuard<'a>(&'a ConcurrencyGauge);

impl ConcurrencyGauge {
    fn enter(&self) -> GaugeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(self)
    }

    fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Ranks store references for a section by cosine similarity between the
/// embedded section heading text (title plus all subsection titles) and
/// each reference's title+snippet. Ties break toward lower reference ids.
pub async fn section_references(
    gateway: &Gateway,
    section: &SectionNode,
    store: &ReferenceStore,
    k: usize,
) -> Result<Vec<RankedReference>, WriterError> {
    if store.is_empty() {
        return Err(WriterError::EmptyStore);
    }
    let query = section.titles().join(" ");
    let mut texts = vec![query];
    let refs: Vec<RankedReference> = store
        .iter()
        .map(|(id, r)| RankedReference {
            id,
            title: r.title.clone(),
            url: r.url.clone(),
            snippet: r.snippet.clone(),
        })
        .collect();
    texts.extend(refs.iter().map(|r| format!("{} {}", r.title, r.snippet)));
    let vectors = gateway.embed(&texts).await?;
    let (query_vec, ref_vecs) = vectors.split_first().expect("one vector per text");

    let mut scored: Vec<(usize, f64)> = ref_vecs
        .iter()
        .enumerate()
        .map(|(i, v)| (i, query_vec.cosine(v)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored
        .into_iter()
        .take(k.max(1))
        .map(|(i, _)| refs[i].clone())
        .collect())
}

fn format_collected_info(refs: &[RankedReference]) -> String {
    refs.iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}\n{}", i + 1, r.title, r.snippet))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Truncates `text` to its first `budget` whitespace tokens, preserving the
/// original spacing of what survives.
fn truncate_tokens(text: &str, budget: usize) -> &str {
    if budget == 0 {
        return "";
    }
    let mut tokens = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            tokens += 1;
            if tokens > budget {
                return text[..i].trim_end();
            }
        }
    }
    text
}

/// Dependency bodies, newest-completed first, cut at the context budget.
fn format_other_sections(
    dependencies: &[&SectionDraft],
    budget_tokens: usize,
) -> String {
    if dependencies.is_empty() {
        return "(no other sections are available yet)".to_string();
    }
    let joined = dependencies
        .iter()
        .map(|d| d.body.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    truncate_tokens(&joined, budget_tokens).to_string()
}

/// Scans `body` for `[number]` markers, returning the distinct marker
/// values in first-appearance order.
fn scan_markers(body: &str) -> Vec<usize> {
    let mut seen = Vec::new();
    for marker in MarkerScanner::new(body) {
        if let Segment::Marker(value, _) = marker {
            if !seen.contains(&value) {
                seen.push(value);
            }
        }
    }
    seen
}

enum Segment<'a> {
    Text(&'a str),
    Marker(usize, &'a str),
}

/// Splits text into literal segments and `[digits]` citation markers.
struct MarkerScanner<'a> {
    rest: &'a str,
}

impl<'a> MarkerScanner<'a> {
    fn new(text: &'a str) -> Self {
        Self { rest: text }
    }
}

impl<'a> Iterator for MarkerScanner<'a> {
    type Item = Segment<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.rest.is_empty() {
            return None;
        }
        if let Some(open) = self.rest.find('[') {
            if open > 0 {
                let (text, rest) = self.rest.split_at(open);
                self.rest = rest;
                return Some(Segment::Text(text));
            }
            let tail = &self.rest[1..];
            if let Some(close) = tail.find(']') {
                let inner = &tail[..close];
                if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_digit()) {
                    if let Ok(value) = inner.parse::<usize>() {
                        let (marker, rest) = self.rest.split_at(close + 2);
                        self.rest = rest;
                        return Some(Segment::Marker(value, marker));
                    }
                }
            }
            let (bracket, rest) = self.rest.split_at(1);
            self.rest = rest;
            return Some(Segment::Text(bracket));
        }
        let text = self.rest;
        self.rest = "";
        Some(Segment::Text(text))
    }
}

/// Rewrites every valid `[marker]` through `map`; markers absent from the
/// map are removed and recorded.
fn rewrite_markers(body: &str, map: &BTreeMap<usize, usize>, dropped: &mut Vec<usize>) -> String {
    let mut out = String::with_capacity(body.len());
    for segment in MarkerScanner::new(body) {
        match segment {
            Segment::Text(t) => out.push_str(t),
            Segment::Marker(value, raw) => match map.get(&value) {
                Some(new) => out.push_str(&format!("[{new}]")),
                None => {
                    if !dropped.contains(&value) {
                        dropped.push(value);
                    }
                    let _ = raw;
                }
            },
        }
    }
    out
}

/// Writes one section. The reply must start at `# section title`; when
/// absent the heading is prepended. Inline `[i]` markers map positionally
/// onto the provided references; a marker past the reference list is
/// dropped with a warning.
pub async fn write_section(
    gateway: &Gateway,
    topic: &str,
    section: &SectionNode,
    refs: &[RankedReference],
    dependencies: &[&SectionDraft],
    config: &WriterConfig,
) -> Result<(SectionDraft, TranscriptEntry), WriterError> {
    let section_outline = render_outline(&Outline {
        roots: vec![section.clone()],
    });
    let bindings = BTreeMap::from([
        ("collected_info".to_string(), format_collected_info(refs)),
        ("topic".to_string(), topic.to_string()),
        (
            "other_sections".to_string(),
            format_other_sections(dependencies, config.context_budget_tokens),
        ),
        ("section_title".to_string(), section.title.clone()),
        ("section_outline".to_string(), section_outline),
    ]);
    let done = gateway
        .complete(TemplateId::SectionWriting, Some(&section.title), &bindings)
        .await?;

    let mut body = done.reply.trim().to_string();
    let heading_ok = body
        .lines()
        .next()
        .and_then(crate::outline::heading_title)
        .map(|(level, title)| level == 1 && normalize_title(&title) == normalize_title(&section.title))
        .unwrap_or(false);
    if !heading_ok {
        body = format!("# {}\n\n{}", section.title, body);
    }

    let mut warnings = Vec::new();
    // Positional mapping: [i] cites the i-th provided reference. Valid
    // markers keep their value here; invalid ones are removed.
    let valid: BTreeMap<usize, usize> = (1..=refs.len()).map(|i| (i, i)).collect();
    let mut dropped = Vec::new();
    let body = rewrite_markers(&body, &valid, &mut dropped);
    for marker in dropped {
        warnings.push(format!(
            "citation [{marker}] exceeds the {} provided references; marker removed",
            refs.len()
        ));
    }

    let citations = scan_markers(&body)
        .into_iter()
        .map(|marker| {
            let r = &refs[marker - 1];
            Citation {
                marker,
                ref_id: r.id,
                url: r.url.clone(),
                title: r.title.clone(),
            }
        })
        .collect();

    Ok((
        SectionDraft {
            title: section.title.clone(),
            body,
            citations,
            used_dependencies: dependencies.iter().map(|d| d.title.clone()).collect(),
            warnings,
            placeholder: false,
        },
        done.transcript,
    ))
}

fn placeholder_draft(title: &str, reason: &str) -> SectionDraft {
    SectionDraft {
        title: title.to_string(),
        body: format!("# {title}\n\n*This section could not be generated.*"),
        citations: Vec::new(),
        used_dependencies: Vec::new(),
        warnings: vec![format!("section generation failed: {reason}")],
        placeholder: true,
    }
}

/// Generates the whole article: schedules the plan into waves, runs at most
/// `max_parallel` concurrent section writes, assembles sections in outline
/// order regardless of generation order, and renumbers citations globally.
/// A section that still fails after retries becomes a placeholder and marks
/// the article partial.
pub async fn generate_article(
    gateway: &Gateway,
    topic: &str,
    outline: &Outline,
    plan: &WritingPlan,
    store: &ReferenceStore,
    config: &WriterConfig,
) -> Result<WriterOutcome, WriterError> {
    let sections = first_level_sections(outline);
    if sections.len() != plan.nodes.len()
        || sections
            .iter()
            .zip(&plan.nodes)
            .any(|(a, b)| normalize_title(a) != normalize_title(b))
    {
        return Err(WriterError::PlanOutlineMismatch);
    }
    if store.is_empty() {
        return Err(WriterError::EmptyStore);
    }

    let schedule = topological_schedule(plan, config.max_parallel)?;
    let outline_index: HashMap<String, usize> = sections
        .iter()
        .enumerate()
        .map(|(i, s)| (normalize_title(s), i))
        .collect();

    let gauge = Arc::new(ConcurrencyGauge::default());
    let semaphore = Arc::new(Semaphore::new(config.max_parallel.max(1)));
    let mut completed: HashMap<String, SectionDraft> = HashMap::new();
    let mut stats = WriterStats::default();
    let mut transcript = Vec::new();
    // (wave, outline position) per completed draft, for dependency recency.
    let mut wave_of: HashMap<String, usize> = HashMap::new();

    for (wave_index, wave) in schedule.waves.iter().enumerate() {
        let mut ordered: Vec<&String> = wave.iter().collect();
        ordered.sort_by_key(|title| outline_index[&normalize_title(title)]);

        let tasks = ordered.iter().map(|title| {
            let key = normalize_title(title);
            let node = outline
                .root_section(title)
                .expect("plan nodes match outline sections");
            // Dependencies completed in earlier waves, newest wave first,
            // outline order within a wave.
            let mut dep_titles = plan.dependencies_of(title);
            dep_titles.sort_by_key(|dep| {
                let dkey = normalize_title(dep);
                (
                    std::cmp::Reverse(wave_of.get(&dkey).copied().unwrap_or(0)),
                    outline_index[&dkey],
                )
            });
            let deps: Vec<&SectionDraft> = dep_titles
                .iter()
                .filter_map(|dep| completed.get(&normalize_title(dep)))
                .collect();
            let gauge = Arc::clone(&gauge);
            let semaphore = Arc::clone(&semaphore);
            stats.generation_order.push(title.to_string());
            let _ = key;
            async move {
                let permit = semaphore.acquire().await.expect("semaphore open");
                // The gauge guard must release before the permit does, so a
                // successor acquiring the freed permit never overlaps with
                // this task still counted in flight.
                let result = {
                    let _guard = gauge.enter();
                    async {
                        let refs =
                            section_references(gateway, node, store, config.section_ref_k).await?;
                        write_section(gateway, topic, node, &refs, &deps, config).await
                    }
                    .await
                };
                drop(permit);
                (node.title.clone(), result)
            }
        });

        let results = join_all(tasks).await;
        for (title, result) in results {
            let draft = match result {
                Ok((draft, entry)) => {
                    transcript.push(entry);
                    draft
                }
                Err(err) => {
                    stats.placeholder_sections.push(title.clone());
                    placeholder_draft(&title, &err.to_string())
                }
            };
            wave_of.insert(normalize_title(&title), wave_index + 1);
            completed.insert(normalize_title(&title), draft);
        }
    }

    stats.peak_concurrency = gauge.peak();
    let partial = !stats.placeholder_sections.is_empty();

    // Assemble in outline order regardless of generation order.
    let drafts: Vec<SectionDraft> = sections
        .iter()
        .map(|title| {
            completed
                .remove(&normalize_title(title))
                .expect("every scheduled section completed")
        })
        .collect();

    let mut article = renumber_citations(topic, drafts);
    article.partial = partial;
    Ok(WriterOutcome {
        article,
        schedule,
        stats,
        transcript,
    })
}

/// Builds the global bibliography ordered by first appearance across
/// sections (outline order), assigns each URL one dense global id, and
/// rewrites every inline marker to its global id. Idempotent.
pub fn renumber_citations(topic: &str, drafts: Vec<SectionDraft>) -> Article {
    let mut url_to_gid: HashMap<String, usize> = HashMap::new();
    let mut bibliography: Vec<BibEntry> = Vec::new();
    let mut sections = Vec::with_capacity(drafts.len());

    for draft in drafts {
        let by_marker: HashMap<usize, &Citation> =
            draft.citations.iter().map(|c| (c.marker, c)).collect();
        // First appearance order comes from the body text itself.
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        for marker in scan_markers(&draft.body) {
            let Some(citation) = by_marker.get(&marker) else {
                continue;
            };
            let gid = *url_to_gid.entry(citation.url.clone()).or_insert_with(|| {
                bibliography.push(BibEntry {
                    id: bibliography.len() + 1,
                    url: citation.url.clone(),
                    title: citation.title.clone(),
                });
                bibliography.len()
            });
            map.insert(marker, gid);
        }

        let mut dropped = Vec::new();
        let body = rewrite_markers(&draft.body, &map, &mut dropped);
        let mut warnings = draft.warnings.clone();
        for marker in dropped {
            warnings.push(format!("unmapped citation [{marker}] removed during renumbering"));
        }

        let mut citations: Vec<Citation> = map
            .iter()
            .map(|(marker, gid)| {
                let original = by_marker[marker];
                Citation {
                    marker: *gid,
                    ref_id: original.ref_id,
                    url: original.url.clone(),
                    title: original.title.clone(),
                }
            })
            .collect();
        citations.sort_by_key(|c| c.marker);
        citations.dedup_by_key(|c| c.marker);

        sections.push(SectionDraft {
            title: draft.title,
            body,
            citations,
            used_dependencies: draft.used_dependencies,
            warnings,
            placeholder: draft.placeholder,
        });
    }

    Article {
        topic: topic.to_string(),
        sections,
        bibliography,
        partial: false,
    }
}

/// Serializes the article: section bodies in outline order separated by
/// blank lines, then a terminal `## References` list with
/// `n. title — url` entries. Ends with a newline.
pub fn render_article_markdown(article: &Article) -> String {
    let mut out = String::new();
    for (i, section) in article.sections.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(section.body.trim_end());
    }
    if !article.bibliography.is_empty() {
        out.push_str("\n\n## References\n");
        for entry in &article.bibliography {
            out.push_str(&format!("{}. {} — {}\n", entry.id, entry.title, entry.url));
        }
    } else {
        out.push('\n');
    }
    out
}

/// Total whitespace tokens across all section bodies.
pub fn article_token_count(article: &Article) -> u64 {
    article
        .sections
        .iter()
        .map(|s| estimate_tokens(&s.body))
        .sum()
}
