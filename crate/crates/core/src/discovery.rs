//! Information discovery: intent recognition, retrieval-augmented initial
//! outline generation, the attribute-constrained search loop, and
//! edit-operation outline refinement until convergence or the search limits
//! are reached.

use std::collections::{BTreeMap, HashSet};

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::gateway::{Gateway, GatewayError, SearchResult, TemplateId, TranscriptEntry};
use crate::outline::{
    apply_operations, first_level_sections, normalize_title, parse_operations, parse_outline,
    render_outline, EditOperation, Outline, OutlineError,
};

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("initial outline reply contained no headings")]
    EmptyOutline,
    #[error("attribute extraction reply contained no usable lines")]
    NoAttributes,
    #[error("attribute buffer is empty; cannot generate queries")]
    EmptyAttributeBuffer,
    #[error("query generation reply contained no queries")]
    NoQueries,
    #[error("every search query in the batch failed")]
    SearchBatchFailed,
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// A fatal discovery error together with the partial run report collected
/// up to the failure.
#[derive(Debug)]
pub struct DiscoveryFailure {
    pub error: DiscoveryError,
    pub report: DiscoveryReport,
}

impl std::fmt::Display for DiscoveryFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for DiscoveryFailure {}

/// A clarified writing intent: at most three sentences about the topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BriefIntro {
    pub topic: String,
    pub text: String,
}

impl BriefIntro {
    pub fn new(topic: &str, reply: &str) -> Self {
        Self {
            topic: topic.to_string(),
            text: first_n_sentences(reply.trim(), 3),
        }
    }

    pub fn sentence_count(&self) -> usize {
        count_sentences(&self.text)
    }
}

/// Byte offsets just past each sentence end: a terminator (. ! ?) plus any
/// attached closing quotes/brackets, followed by whitespace or the end of
/// the text.
fn sentence_boundaries(text: &str) -> Vec<usize> {
    let mut boundaries = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut stop = i + c.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if matches!(next, '"' | '\'' | ')' | ']' | '.' | '!' | '?') {
                stop = j + next.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let at_boundary = chars
            .peek()
            .map(|&(_, next)| next.is_whitespace())
            .unwrap_or(true);
        if at_boundary {
            boundaries.push(stop);
        }
    }
    boundaries
}

/// Cuts `text` after its `n`-th sentence boundary; text without that many
/// boundaries is returned whole.
pub fn first_n_sentences(text: &str, n: usize) -> String {
    let boundaries = sentence_boundaries(text);
    let end = match (n.checked_sub(1)).and_then(|i| boundaries.get(i)) {
        Some(&stop) => stop,
        None => text.len(),
    };
    text[..end].trim_end().to_string()
}

fn count_sentences(text: &str) -> usize {
    let boundaries = sentence_boundaries(text);
    let tail_start = boundaries.last().copied().unwrap_or(0);
    boundaries.len() + usize::from(!text[tail_start..].trim().is_empty())
}

/// Monotone set of topic attributes. Duplicates (after normalization) and
/// the topic itself never enter the buffer.
#[derive(Debug, Clone)]
pub struct AttributeBuffer {
    topic_key: String,
    items: Vec<String>,
    keys: HashSet<String>,
}

impl AttributeBuffer {
    pub fn new(topic: &str) -> Self {
        Self {
            topic_key: normalize_title(topic),
            items: Vec::new(),
            keys: HashSet::new(),
        }
    }

    /// Inserts one attribute; returns true when it was new.
    pub fn insert(&mut self, attribute: &str) -> bool {
        let trimmed = attribute.trim().trim_start_matches(['-', '*']).trim();
        if trimmed.is_empty() {
            return false;
        }
        let key = normalize_title(trimmed);
        if key.is_empty() || key == self.topic_key || self.keys.contains(&key) {
            return false;
        }
        self.keys.insert(key);
        self.items.push(trimmed.to_string());
        true
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn attributes(&self) -> &[String] {
        &self.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStage {
    Raw,
    Merged,
}

/// Insertion-ordered set of search queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<String>,
    pub stage: QueryStage,
}

impl QuerySet {
    pub fn new(stage: QueryStage) -> Self {
        Self {
            queries: Vec::new(),
            stage,
        }
    }

    pub fn insert(&mut self, query: &str) -> bool {
        let trimmed = query.trim();
        if trimmed.is_empty() {
            return false;
        }
        let key = trimmed.to_lowercase();
        if self
            .queries
            .iter()
            .any(|existing| existing.to_lowercase() == key)
        {
            return false;
        }
        self.queries.push(trimmed.to_string());
        true
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Deduplicated pool of search results with dense, stable 1-based ids.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReferenceStore {
    references: Vec<SearchResult>,
    #[serde(skip)]
    seen_urls: HashSet<String>,
}

impl ReferenceStore {
    /// Appends a result unless its URL is already present; returns the
    /// assigned id for new entries.
    pub fn insert(&mut self, result: SearchResult) -> Option<usize> {
        if !self.seen_urls.insert(result.url.clone()) {
            return None;
        }
        self.references.push(result);
        Some(self.references.len())
    }

    pub fn get(&self, id: usize) -> Option<&SearchResult> {
        self.references.get(id.checked_sub(1)?)
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    /// `(id, reference)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &SearchResult)> {
        self.references.iter().enumerate().map(|(i, r)| (i + 1, r))
    }

    pub fn titles(&self) -> Vec<&str> {
        self.references.iter().map(|r| r.title.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// How many similar-topic exemplars to retrieve for few-shot context.
    pub exemplar_n: usize,
    pub max_iterations: usize,
    /// Total search queries allowed across all iterations.
    pub max_total_queries: usize,
    /// Cap applied to the merged query set each iteration.
    pub merged_query_cap: usize,
    /// Attributes supplied up front (e.g. by a human) before extraction.
    pub preloaded_attributes: Vec<String>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            exemplar_n: 3,
            max_iterations: 2,
            max_total_queries: 30,
            merged_query_cap: 15,
            preloaded_attributes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
    QueryBudget,
    Aborted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub index: usize,
    pub attributes_added: usize,
    pub buffer_size: usize,
    pub raw_queries: Vec<String>,
    pub merged_queries: Vec<String>,
    pub merge_fallback: bool,
    pub dispatched_queries: Vec<String>,
    pub query_failures: Vec<String>,
    pub new_references: usize,
    pub store_size: usize,
    pub operations: Vec<String>,
    pub operation_warnings: Vec<String>,
    pub refinement_parse_fallback: bool,
    pub outline_after: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub topic: String,
    pub brief: String,
    pub brief_sentences: usize,
    pub exemplar_topics: Vec<String>,
    pub preloaded_attributes: usize,
    pub initial_outline: String,
    pub iterations: Vec<IterationReport>,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub total_queries: usize,
    pub attribute_count: usize,
    pub reference_count: usize,
    pub flags: Vec<String>,
}

#[derive(Debug)]
pub struct DiscoveryOutcome {
    pub outline: Outline,
    pub store: ReferenceStore,
    pub brief: BriefIntro,
    pub report: DiscoveryReport,
    pub transcript: Vec<TranscriptEntry>,
}

fn bind(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

pub fn format_search_context(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return "No search results were available for this topic.".to_string();
    }
    results
        .iter()
        .map(|r| format!("{}. {}\n{}", r.rank, r.title, r.snippet))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn format_exemplar_outlines(exemplars: &[(String, Outline)]) -> String {
    if exemplars.is_empty() {
        return "(no similar topic outlines available)".to_string();
    }
    exemplars
        .iter()
        .map(|(topic, outline)| format!("Topic: {topic}\nOutline:\n{}", render_outline(outline)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn format_attribute_list(buffer: &AttributeBuffer) -> String {
    buffer.attributes().join("\n")
}

fn format_query_list(queries: &[String]) -> String {
    queries
        .iter()
        .map(|q| format!("- {q}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_exemplar_queries(exemplar_queries: &[(String, Vec<String>)]) -> String {
    if exemplar_queries.is_empty() {
        return "(no similar topic queries available)".to_string();
    }
    exemplar_queries
        .iter()
        .map(|(topic, queries)| format!("Topic: {topic}\nQueries:\n{}", format_query_list(queries)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn format_reference_titles(store: &ReferenceStore) -> String {
    store
        .titles()
        .iter()
        .map(|t| format!("- {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_operations(operations: &[EditOperation]) -> String {
    operations
        .iter()
        .map(|op| op.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses reply lines of the form `- query`; other nonempty lines are
/// skipped and counted.
fn parse_query_lines(text: &str) -> (Vec<String>, usize) {
    let mut queries = Vec::new();
    let mut skipped = 0;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line.strip_prefix('-') {
            Some(rest) if !rest.trim().is_empty() => queries.push(rest.trim().to_string()),
            _ => skipped += 1,
        }
    }
    (queries, skipped)
}

/// Recognizes the writing intent: one search over the topic, then a brief
/// introduction truncated to three sentences. An empty search result list
/// is tolerated and flagged, not fatal.
pub async fn summarize_topic(
    gateway: &Gateway,
    topic: &str,
) -> Result<(BriefIntro, Vec<SearchResult>, TranscriptEntry), DiscoveryError> {
    let results = gateway.search(topic).await?;
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("search_results", format_search_context(&results)),
    ]);
    let done = gateway
        .complete(TemplateId::TopicSummarization, None, &bindings)
        .await?;
    Ok((BriefIntro::new(topic, &done.reply), results, done.transcript))
}

/// Generates the initial outline from the brief, the topic search context,
/// and retrieved exemplars. Headings equal to the topic are removed with
/// their children promoted one level.
pub async fn generate_initial_outline(
    gateway: &Gateway,
    topic: &str,
    brief: &BriefIntro,
    search_results: &[SearchResult],
    exemplars: &[(String, Outline)],
) -> Result<(Outline, TranscriptEntry), DiscoveryError> {
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("brief_intro", brief.text.clone()),
        ("search_results", format_search_context(search_results)),
        ("exemplar_outlines", format_exemplar_outlines(exemplars)),
    ]);
    let done = gateway
        .complete(TemplateId::RagOutlineGeneration, None, &bindings)
        .await?;
    let mut outline = parse_outline(&done.reply).map_err(|_| DiscoveryError::EmptyOutline)?;
    outline.remove_title_promoting_children(&normalize_title(topic));
    if outline.is_empty() {
        return Err(DiscoveryError::EmptyOutline);
    }
    Ok((outline, done.transcript))
}

/// Extracts attributes from the current outline and merges them into the
/// buffer. Returns how many attributes were new this pass.
pub async fn extract_attributes(
    gateway: &Gateway,
    topic: &str,
    outline: &Outline,
    buffer: &mut AttributeBuffer,
    iteration: usize,
) -> Result<(usize, TranscriptEntry), DiscoveryError> {
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("outline", render_outline(outline)),
    ]);
    let done = gateway
        .complete(
            TemplateId::AttributesExtraction,
            Some(&iteration.to_string()),
            &bindings,
        )
        .await?;
    let lines: Vec<&str> = done
        .reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(DiscoveryError::NoAttributes);
    }
    let mut added = 0;
    for line in lines {
        if buffer.insert(line) {
            added += 1;
        }
    }
    Ok((added, done.transcript))
}

/// Turns the attribute buffer into raw search queries.
pub async fn attributes_to_queries(
    gateway: &Gateway,
    topic: &str,
    buffer: &AttributeBuffer,
    iteration: usize,
) -> Result<(QuerySet, usize, TranscriptEntry), DiscoveryError> {
    if buffer.is_empty() {
        return Err(DiscoveryError::EmptyAttributeBuffer);
    }
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("attributes", format_attribute_list(buffer)),
    ]);
    let done = gateway
        .complete(
            TemplateId::AttributesToQueries,
            Some(&iteration.to_string()),
            &bindings,
        )
        .await?;
    let (lines, skipped) = parse_query_lines(&done.reply);
    let mut set = QuerySet::new(QueryStage::Raw);
    for line in lines {
        set.insert(&line);
    }
    if set.is_empty() {
        return Err(DiscoveryError::NoQueries);
    }
    Ok((set, skipped, done.transcript))
}

/// Selectively merges the raw queries with exemplar queries. When the reply
/// parses to zero queries the raw set is kept and the fallback recorded.
pub async fn merge_queries(
    gateway: &Gateway,
    topic: &str,
    raw: &QuerySet,
    exemplar_queries: &[(String, Vec<String>)],
    cap: usize,
    iteration: usize,
) -> Result<(QuerySet, bool, TranscriptEntry), DiscoveryError> {
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("queries", format_query_list(&raw.queries)),
        ("exemplar_queries", format_exemplar_queries(exemplar_queries)),
    ]);
    let done = gateway
        .complete(
            TemplateId::QueriesMerging,
            Some(&iteration.to_string()),
            &bindings,
        )
        .await?;
    let (lines, _) = parse_query_lines(&done.reply);
    let mut merged = QuerySet::new(QueryStage::Merged);
    for line in lines {
        if merged.len() >= cap {
            break;
        }
        merged.insert(&line);
    }
    if merged.is_empty() {
        let mut fallback = QuerySet::new(QueryStage::Merged);
        for q in raw.queries.iter().take(cap) {
            fallback.insert(q);
        }
        return Ok((fallback, true, done.transcript));
    }
    Ok((merged, false, done.transcript))
}

/// Fans out all queries concurrently (bounded by the gateway's in-flight
/// cap) and commits results in query order after every search completes,
/// so reference ids never depend on completion order. Fails only when every
/// query fails.
pub async fn gather_references(
    gateway: &Gateway,
    queries: &[String],
    store: &mut ReferenceStore,
) -> Result<(usize, Vec<String>), DiscoveryError> {
    let searches = queries.iter().map(|q| gateway.search(q));
    let outcomes = join_all(searches).await;

    let mut failures = Vec::new();
    let mut new_refs = 0;
    let mut any_ok = false;
    for (query, outcome) in queries.iter().zip(outcomes) {
        match outcome {
            Ok(results) => {
                any_ok = true;
                for result in results {
                    if store.insert(result).is_some() {
                        new_refs += 1;
                    }
                }
            }
            Err(err) => failures.push(format!("{query}: {err}")),
        }
    }
    if !any_ok && !queries.is_empty() {
        return Err(DiscoveryError::SearchBatchFailed);
    }
    Ok((new_refs, failures))
}

/// Asks the LLM for edit operations given the current outline and the
/// titles gathered so far. An unparseable reply degrades to `[do nothing]`
/// with a warning.
pub async fn propose_operations(
    gateway: &Gateway,
    topic: &str,
    outline: &Outline,
    store: &ReferenceStore,
    iteration: usize,
) -> Result<(Vec<EditOperation>, Vec<String>, TranscriptEntry), DiscoveryError> {
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("outline", render_outline(outline)),
        ("reference_titles", format_reference_titles(store)),
    ]);
    let done = gateway
        .complete(
            TemplateId::OperationGeneration,
            Some(&iteration.to_string()),
            &bindings,
        )
        .await?;
    match parse_operations(&done.reply) {
        Ok(parsed) => {
            let mut warnings = Vec::new();
            if parsed.skipped > 0 {
                warnings.push(format!("{} operation line(s) skipped", parsed.skipped));
            }
            Ok((parsed.operations, warnings, done.transcript))
        }
        Err(OutlineError::NoOperations) => Ok((
            vec![EditOperation::DoNothing],
            vec!["operation reply unparseable; treated as [do nothing]".to_string()],
            done.transcript,
        )),
        Err(other) => Ok((
            vec![EditOperation::DoNothing],
            vec![format!("operation parsing failed ({other}); treated as [do nothing]")],
            done.transcript,
        )),
    }
}

/// Applies the operations mechanically, then lets the LLM refine the edited
/// outline. A reply that fails to parse keeps the mechanically edited
/// outline.
pub async fn refine_outline(
    gateway: &Gateway,
    topic: &str,
    outline: &Outline,
    operations: &[EditOperation],
    iteration: usize,
) -> Result<(Outline, bool, TranscriptEntry), DiscoveryError> {
    let (edited, _log) = apply_operations(outline, operations);
    let bindings = bind(&[
        ("topic", topic.to_string()),
        ("outline", render_outline(&edited)),
        ("operations", format_operations(operations)),
    ]);
    let done = gateway
        .complete(
            TemplateId::OutlineRefinement,
            Some(&iteration.to_string()),
            &bindings,
        )
        .await?;
    match parse_outline(&done.reply) {
        Ok(refined) => Ok((refined, false, done.transcript)),
        Err(_) => Ok((edited, true, done.transcript)),
    }
}

/// Derives exemplar queries without extra LLM calls: each exemplar's
/// first-level titles become `"<topic> <title>"` queries.
pub fn mechanical_exemplar_queries(exemplars: &[(String, Outline)]) -> Vec<(String, Vec<String>)> {
    exemplars
        .iter()
        .map(|(topic, outline)| {
            let queries = first_level_sections(outline)
                .into_iter()
                .map(|title| format!("{topic} {title}"))
                .collect();
            (topic.clone(), queries)
        })
        .collect()
}

/// Runs the full discovery stage. Each iteration extracts attributes,
/// generates and merges queries, gathers references, proposes edit
/// operations, and refines the outline; it stops when an iteration adds no
/// new attribute and proposes only `[do nothing]`, or when the iteration or
/// query limits are reached.
pub async fn discovery_loop(
    gateway: &Gateway,
    index: Option<&CorpusIndex>,
    topic: &str,
    config: &DiscoveryConfig,
) -> Result<DiscoveryOutcome, Box<DiscoveryFailure>> {
    let mut report = DiscoveryReport {
        topic: topic.to_string(),
        ..DiscoveryReport::default()
    };
    let mut transcript = Vec::new();

    macro_rules! try_stage {
        ($expr:expr) => {
            match $expr {
                Ok(value) => value,
                Err(err) => {
                    report.stop_reason = Some(StopReason::Aborted);
                    return Err(Box::new(DiscoveryFailure {
                        error: err.into(),
                        report,
                    }));
                }
            }
        };
    }

    let (brief, topic_hits, entry) = try_stage!(summarize_topic(gateway, topic).await);
    transcript.push(entry);
    report.brief = brief.text.clone();
    report.brief_sentences = brief.sentence_count();
    if topic_hits.is_empty() {
        report.flags.push("no search context".to_string());
    }

    let exemplars = match index {
        Some(index) if !index.is_empty() && config.exemplar_n > 0 => {
            try_stage!(index
                .retrieve_exemplars(gateway, topic, &brief.text, config.exemplar_n)
                .await)
        }
        _ => Vec::new(),
    };
    report.exemplar_topics = exemplars.iter().map(|(t, _)| t.clone()).collect();
    if exemplars.is_empty() {
        report.flags.push("no exemplar outlines".to_string());
    }

    let (mut outline, entry) = try_stage!(
        generate_initial_outline(gateway, topic, &brief, &topic_hits, &exemplars).await
    );
    transcript.push(entry);
    report.initial_outline = render_outline(&outline);

    let exemplar_queries = mechanical_exemplar_queries(&exemplars);
    let mut buffer = AttributeBuffer::new(topic);
    for attribute in &config.preloaded_attributes {
        if buffer.insert(attribute) {
            report.preloaded_attributes += 1;
        }
    }

    let mut store = ReferenceStore::default();
    let mut queries_used = 0usize;

    for iteration in 1..=config.max_iterations.max(1) {
        let mut iter_report = IterationReport {
            index: iteration,
            ..IterationReport::default()
        };

        let (added, entry) =
            try_stage!(extract_attributes(gateway, topic, &outline, &mut buffer, iteration).await);
        transcript.push(entry);
        iter_report.attributes_added = added;
        iter_report.buffer_size = buffer.len();

        if buffer.is_empty() {
            report.iterations.push(iter_report);
            report.stop_reason = Some(StopReason::Aborted);
            return Err(Box::new(DiscoveryFailure {
                error: DiscoveryError::EmptyAttributeBuffer,
                report,
            }));
        }

        let (raw, _skipped, entry) =
            try_stage!(attributes_to_queries(gateway, topic, &buffer, iteration).await);
        transcript.push(entry);
        iter_report.raw_queries = raw.queries.clone();

        let (merged, fallback, entry) = try_stage!(
            merge_queries(
                gateway,
                topic,
                &raw,
                &exemplar_queries,
                config.merged_query_cap,
                iteration
            )
            .await
        );
        transcript.push(entry);
        iter_report.merged_queries = merged.queries.clone();
        iter_report.merge_fallback = fallback;
        if fallback {
            report.flags.push(format!(
                "iteration {iteration}: merge reply empty, raw queries kept"
            ));
        }

        let budget_left = config.max_total_queries.saturating_sub(queries_used);
        let dispatched: Vec<String> = merged.queries.iter().take(budget_left).cloned().collect();
        iter_report.dispatched_queries = dispatched.clone();
        queries_used += dispatched.len();

        let (new_refs, failures) =
            try_stage!(gather_references(gateway, &dispatched, &mut store).await);
        iter_report.new_references = new_refs;
        iter_report.store_size = store.len();
        iter_report.query_failures = failures;

        let converged;
        if store.is_empty() {
            report
                .flags
                .push(format!("iteration {iteration}: no references gathered"));
            iter_report.operations = vec![EditOperation::DoNothing.to_string()];
            converged = added == 0;
        } else {
            let (operations, warnings, entry) =
                try_stage!(propose_operations(gateway, topic, &outline, &store, iteration).await);
            transcript.push(entry);
            iter_report.operations = operations.iter().map(|op| op.to_string()).collect();
            iter_report.operation_warnings = warnings;

            let (refined, parse_fallback, entry) =
                try_stage!(refine_outline(gateway, topic, &outline, &operations, iteration).await);
            transcript.push(entry);
            iter_report.refinement_parse_fallback = parse_fallback;
            outline = refined;

            converged = added == 0 && operations.iter().all(EditOperation::is_do_nothing);
        }
        iter_report.outline_after = render_outline(&outline);
        report.iterations.push(iter_report);

        if converged {
            report.converged = true;
            report.stop_reason = Some(StopReason::Converged);
            break;
        }
        if queries_used >= config.max_total_queries {
            report.stop_reason = Some(StopReason::QueryBudget);
            break;
        }
        if iteration == config.max_iterations.max(1) {
            report.stop_reason = Some(StopReason::IterationCap);
        }
    }

    report.total_queries = queries_used;
    report.attribute_count = buffer.len();
    report.reference_count = store.len();

    Ok(DiscoveryOutcome {
        outline,
        store,
        brief,
        report,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockChatProvider, MockEmbedProvider, MockSearchProvider};
    use crate::gateway::{GatewayConfig, RawSearchHit};
    use std::sync::Arc;

    fn hits(prefix: &str, n: usize) -> Vec<RawSearchHit> {
        (1..=n)
            .map(|i| RawSearchHit {
                title: format!("{prefix} result {i}"),
                url: format!("https://{prefix}.example.org/{i}"),
                snippet: format!("snippet about {prefix} {i}"),
            })
            .collect()
    }

    fn gateway(chat: MockChatProvider, search: MockSearchProvider) -> Gateway {
        Gateway::new(
            Arc::new(chat),
            Arc::new(search),
            Arc::new(MockEmbedProvider::default()),
            GatewayConfig::default(),
        )
    }

    #[test]
    fn sentence_truncation() {
        assert_eq!(first_n_sentences("One. Two. Three. Four.", 3), "One. Two. Three.");
        assert_eq!(first_n_sentences("Only one sentence.", 3), "Only one sentence.");
        assert_eq!(first_n_sentences("No terminator at all", 3), "No terminator at all");
        assert_eq!(first_n_sentences("A! B? C. D.", 3), "A! B? C.");
        assert_eq!(
            first_n_sentences("He said \"stop.\" Then left. Done. Extra.", 3),
            "He said \"stop.\" Then left. Done."
        );
        // Mid-token dots are not boundaries, and counting agrees with
        // truncation on such text.
        assert_eq!(
            first_n_sentences("Version v2.3 works today. Second. Third. Fourth.", 3),
            "Version v2.3 works today. Second. Third."
        );
        let brief = BriefIntro::new("T", "Version v2.3 works today. Second. Third. Fourth.");
        assert_eq!(brief.sentence_count(), 3);
    }

    #[test]
    fn brief_intro_counts_sentences() {
        let brief = BriefIntro::new("T", "First. Second. Third. Fourth. Fifth.");
        assert_eq!(brief.text, "First. Second. Third.");
        assert_eq!(brief.sentence_count(), 3);
        let short = BriefIntro::new("T", "Just two here. Really.");
        assert_eq!(short.sentence_count(), 2);
    }

    #[test]
    fn attribute_buffer_rejects_topic_and_duplicates() {
        let mut buffer = AttributeBuffer::new("Great Barrier Reef");
        assert!(buffer.insert("ecology"));
        assert!(!buffer.insert("Ecology"));
        assert!(!buffer.insert("great barrier reef"));
        assert!(!buffer.insert("  "));
        assert!(buffer.insert("- tourism"));
        assert_eq!(buffer.attributes(), &["ecology", "tourism"]);
    }

    #[test]
    fn reference_store_dedups_by_url_with_dense_ids() {
        let mut store = ReferenceStore::default();
        let result = |url: &str| SearchResult {
            title: "t".into(),
            url: url.into(),
            snippet: String::new(),
            rank: 1,
            source_query: "q".into(),
        };
        assert_eq!(store.insert(result("https://a.org")), Some(1));
        assert_eq!(store.insert(result("https://b.org")), Some(2));
        assert_eq!(store.insert(result("https://a.org")), None);
        assert_eq!(store.len(), 2);
        assert_eq!(store.get(1).unwrap().url, "https://a.org");
        assert_eq!(store.get(3), None);
    }

    #[tokio::test]
    async fn summarize_topic_truncates_long_replies() {
        let chat = MockChatProvider::from_pairs(&[(
            "TopicSummarization",
            "S1 is here. S2 follows. S3 next. S4 too long. S5 way over.",
        )]);
        let search = MockSearchProvider::from_fixtures(&[("Kite", hits("kite", 3))]);
        let gw = gateway(chat, search);
        let (brief, results, _) = summarize_topic(&gw, "Kite").await.unwrap();
        assert_eq!(brief.sentence_count(), 3);
        assert_eq!(results.len(), 3);
    }

    #[tokio::test]
    async fn summarize_topic_with_empty_search_still_produces_brief() {
        let chat = MockChatProvider::from_pairs(&[("TopicSummarization", "A brief.")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let (brief, results, _) = summarize_topic(&gw, "Kite").await.unwrap();
        assert_eq!(brief.text, "A brief.");
        assert!(results.is_empty());
    }

    #[tokio::test]
    async fn initial_outline_drops_topic_heading() {
        let chat = MockChatProvider::from_pairs(&[(
            "RagOutlineGeneration",
            "# Kite\n## History\n# Design",
        )]);
        let gw = gateway(chat, MockSearchProvider::default());
        let brief = BriefIntro::new("Kite", "About kites.");
        let (outline, _) = generate_initial_outline(&gw, "Kite", &brief, &[], &[])
            .await
            .unwrap();
        assert_eq!(first_level_sections(&outline), vec!["History", "Design"]);
    }

    #[tokio::test]
    async fn initial_outline_clamps_levels() {
        let chat = MockChatProvider::from_pairs(&[("RagOutlineGeneration", "# A\n### B")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let brief = BriefIntro::new("T", "b");
        let (outline, _) = generate_initial_outline(&gw, "T", &brief, &[], &[]).await.unwrap();
        assert_eq!(outline.roots[0].children[0].level, 2);
    }

    #[tokio::test]
    async fn initial_outline_all_topic_reply_is_empty_error() {
        let chat = MockChatProvider::from_pairs(&[("RagOutlineGeneration", "# Kite")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let brief = BriefIntro::new("Kite", "b");
        let err = generate_initial_outline(&gw, "Kite", &brief, &[], &[])
            .await
            .unwrap_err();
        assert!(matches!(err, DiscoveryError::EmptyOutline));
    }

    #[tokio::test]
    async fn extract_attributes_grows_monotonically() {
        let chat = MockChatProvider::from_pairs(&[
            ("AttributesExtraction::1", "history\nreception"),
            ("AttributesExtraction::2", "history\nreception\nlegacy"),
        ]);
        let gw = gateway(chat, MockSearchProvider::default());
        let outline = parse_outline("# A").unwrap();
        let mut buffer = AttributeBuffer::new("T");
        let (added1, _) = extract_attributes(&gw, "T", &outline, &mut buffer, 1).await.unwrap();
        assert_eq!(added1, 2);
        // Second iteration: one new among two duplicates (set-union oracle).
        let (added2, _) = extract_attributes(&gw, "T", &outline, &mut buffer, 2).await.unwrap();
        assert_eq!(added2, 1);
        assert_eq!(buffer.len(), 3);
    }

    #[tokio::test]
    async fn extract_attributes_drops_topic_line() {
        let chat = MockChatProvider::from_pairs(&[("AttributesExtraction", "Kite\nhistory")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let outline = parse_outline("# A").unwrap();
        let mut buffer = AttributeBuffer::new("Kite");
        let (added, _) = extract_attributes(&gw, "Kite", &outline, &mut buffer, 1).await.unwrap();
        assert_eq!(added, 1);
        assert_eq!(buffer.attributes(), &["history"]);
    }

    #[tokio::test]
    async fn queries_parse_dash_lines_only() {
        let chat = MockChatProvider::from_pairs(&[("AttributesToQueries", "- q1\nnot a query\n- q2")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let mut buffer = AttributeBuffer::new("T");
        buffer.insert("history");
        let (set, skipped, _) = attributes_to_queries(&gw, "T", &buffer, 1).await.unwrap();
        assert_eq!(set.queries, vec!["q1", "q2"]);
        assert_eq!(skipped, 1);
    }

    #[tokio::test]
    async fn queries_error_when_none_parse() {
        let chat = MockChatProvider::from_pairs(&[("AttributesToQueries", "no queries at all")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let mut buffer = AttributeBuffer::new("T");
        buffer.insert("history");
        let err = attributes_to_queries(&gw, "T", &buffer, 1).await.unwrap_err();
        assert!(matches!(err, DiscoveryError::NoQueries));
    }

    #[tokio::test]
    async fn merge_echo_keeps_raw_set() {
        let chat = MockChatProvider::from_pairs(&[("QueriesMerging", "$echo:queries")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let mut raw = QuerySet::new(QueryStage::Raw);
        raw.insert("q1");
        raw.insert("q2");
        let (merged, fallback, _) = merge_queries(&gw, "T", &raw, &[], 15, 1).await.unwrap();
        assert_eq!(merged.queries, raw.queries);
        assert!(!fallback);
        assert_eq!(merged.stage, QueryStage::Merged);
    }

    #[tokio::test]
    async fn merge_caps_reply_in_order() {
        let reply: String = (1..=20).map(|i| format!("- q{i}\n")).collect();
        let chat = MockChatProvider::from_pairs(&[("QueriesMerging", &reply)]);
        let gw = gateway(chat, MockSearchProvider::default());
        let mut raw = QuerySet::new(QueryStage::Raw);
        raw.insert("seed");
        let (merged, _, _) = merge_queries(&gw, "T", &raw, &[], 15, 1).await.unwrap();
        assert_eq!(merged.len(), 15);
        assert_eq!(merged.queries[0], "q1");
        assert_eq!(merged.queries[14], "q15");
    }

    #[tokio::test]
    async fn merge_empty_reply_falls_back_to_raw() {
        let chat = MockChatProvider::from_pairs(&[("QueriesMerging", "I have no suggestions")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let mut raw = QuerySet::new(QueryStage::Raw);
        raw.insert("q1");
        let (merged, fallback, _) = merge_queries(&gw, "T", &raw, &[], 15, 1).await.unwrap();
        assert!(fallback);
        assert_eq!(merged.queries, vec!["q1"]);
    }

    #[tokio::test]
    async fn gather_disjoint_and_overlapping_fixtures() {
        let search = MockSearchProvider::from_fixtures(&[
            ("qa", hits("alpha", 5)),
            ("qb", hits("beta", 5)),
        ]);
        let gw = gateway(MockChatProvider::default(), search);
        let mut store = ReferenceStore::default();
        let queries = vec!["qa".to_string(), "qb".to_string()];
        let (added, failures) = gather_references(&gw, &queries, &mut store).await.unwrap();
        assert_eq!(added, 10);
        assert!(failures.is_empty());

        // Overlap: two queries sharing two URLs dedup to 8.
        let mut shared = hits("alpha", 2);
        shared.extend(hits("gamma", 3));
        let search = MockSearchProvider::from_fixtures(&[
            ("qa", hits("alpha", 5)),
            ("qc", shared),
        ]);
        let gw = gateway(MockChatProvider::default(), search);
        let mut store = ReferenceStore::default();
        let queries = vec!["qa".to_string(), "qc".to_string()];
        let (_, _) = gather_references(&gw, &queries, &mut store).await.unwrap();
        assert_eq!(store.len(), 8);
    }

    #[tokio::test]
    async fn gather_ids_independent_of_completion_order() {
        let fixtures = [
            ("q1", hits("one", 3)),
            ("q2", hits("two", 3)),
            ("q3", hits("three", 3)),
        ];
        let queries: Vec<String> = fixtures.iter().map(|(q, _)| q.to_string()).collect();
        let mut stores = Vec::new();
        for seed in [7u64, 99u64] {
            let search =
                MockSearchProvider::from_fixtures(&fixtures.clone()).with_latency_seed(seed);
            let gw = gateway(MockChatProvider::default(), search);
            let mut store = ReferenceStore::default();
            gather_references(&gw, &queries, &mut store).await.unwrap();
            stores.push(
                store
                    .iter()
                    .map(|(id, r)| (id, r.url.clone()))
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(stores[0], stores[1]);
    }

    #[tokio::test]
    async fn gather_partial_failures_tolerated_total_failure_fatal() {
        let mut search = MockSearchProvider::from_fixtures(&[("ok", hits("fine", 2))]);
        search.insert_error("bad", "boom");
        let gw = gateway(MockChatProvider::default(), search);
        let mut store = ReferenceStore::default();
        let queries = vec!["ok".to_string(), "bad".to_string()];
        let (added, failures) = gather_references(&gw, &queries, &mut store).await.unwrap();
        assert_eq!(added, 2);
        assert_eq!(failures.len(), 1);

        let mut search = MockSearchProvider::default();
        search.insert_error("bad", "boom");
        let gw = gateway(MockChatProvider::default(), search);
        let mut store = ReferenceStore::default();
        let err = gather_references(&gw, &["bad".to_string()], &mut store)
            .await
            .unwrap_err();
        assert!(matches!(err, DiscoveryError::SearchBatchFailed));
    }

    fn store_with(n: usize) -> ReferenceStore {
        let mut store = ReferenceStore::default();
        for hit in hits("ref", n) {
            store.insert(SearchResult {
                title: hit.title,
                url: hit.url,
                snippet: hit.snippet,
                rank: 1,
                source_query: "q".into(),
            });
        }
        store
    }

    #[tokio::test]
    async fn operations_parse_and_degrade_gracefully() {
        let chat = MockChatProvider::from_pairs(&[("OperationGeneration", "-[do nothing]")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let outline = parse_outline("# A").unwrap();
        let (ops, warnings, _) =
            propose_operations(&gw, "T", &outline, &store_with(2), 1).await.unwrap();
        assert_eq!(ops, vec![EditOperation::DoNothing]);
        assert!(warnings.is_empty());

        let chat = MockChatProvider::from_pairs(&[(
            "OperationGeneration",
            "-[add section] : Legacy\n-[delete section] : Trivia",
        )]);
        let gw = gateway(chat, MockSearchProvider::default());
        let (ops, _, _) = propose_operations(&gw, "T", &outline, &store_with(2), 1).await.unwrap();
        assert_eq!(ops.len(), 2);

        let chat = MockChatProvider::from_pairs(&[("OperationGeneration", "meaningless chatter")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let (ops, warnings, _) =
            propose_operations(&gw, "T", &outline, &store_with(2), 1).await.unwrap();
        assert_eq!(ops, vec![EditOperation::DoNothing]);
        assert_eq!(warnings.len(), 1);
    }

    #[tokio::test]
    async fn refine_echo_applies_mechanical_edit() {
        let chat = MockChatProvider::from_pairs(&[("OutlineRefinement", "$echo:outline")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let outline = parse_outline("# A").unwrap();

        let (refined, fallback, _) =
            refine_outline(&gw, "T", &outline, &[EditOperation::DoNothing], 1)
                .await
                .unwrap();
        assert_eq!(refined, outline);
        assert!(!fallback);

        let (refined, _, _) = refine_outline(
            &gw,
            "T",
            &outline,
            &[EditOperation::AddSection { title: "X".into() }],
            1,
        )
        .await
        .unwrap();
        assert!(refined.contains_normalized("x"));
    }

    #[tokio::test]
    async fn refine_unparseable_reply_keeps_mechanical_edit() {
        let chat = MockChatProvider::from_pairs(&[("OutlineRefinement", "no headings in reply")]);
        let gw = gateway(chat, MockSearchProvider::default());
        let outline = parse_outline("# A").unwrap();
        let (refined, fallback, _) = refine_outline(
            &gw,
            "T",
            &outline,
            &[EditOperation::AddSection { title: "X".into() }],
            1,
        )
        .await
        .unwrap();
        assert!(fallback);
        assert_eq!(first_level_sections(&refined), vec!["A", "X"]);
    }

    #[test]
    fn exemplar_queries_derive_from_first_level_titles() {
        let outline = parse_outline("# Geography\n## Extent\n# Ecology").unwrap();
        let queries = mechanical_exemplar_queries(&[("Coral Sea".to_string(), outline)]);
        assert_eq!(
            queries,
            vec![(
                "Coral Sea".to_string(),
                vec!["Coral Sea Geography".to_string(), "Coral Sea Ecology".to_string()]
            )]
        );
    }

    fn loop_chat(converging: bool) -> MockChatProvider {
        let mut chat = MockChatProvider::default();
        chat.insert("TopicSummarization", "A brief intro. It is short.");
        chat.insert("RagOutlineGeneration", "# History\n# Design");
        if converging {
            // Preloaded attributes cover everything the extractor returns,
            // and the operations are all [do nothing].
            chat.insert("AttributesExtraction", "history\ndesign");
            chat.insert("AttributesToQueries", "- q history\n- q design");
            chat.insert("QueriesMerging", "$echo:queries");
            chat.insert("OperationGeneration", "-[do nothing]");
            chat.insert("OutlineRefinement", "$echo:outline");
        } else {
            chat.insert("AttributesExtraction::1", "history\ndesign");
            chat.insert("AttributesExtraction::2", "materials");
            chat.insert("AttributesExtraction::3", "aerodynamics");
            chat.insert("AttributesToQueries", "- q history\n- q design");
            chat.insert("QueriesMerging", "$echo:queries");
            chat.insert("OperationGeneration", "-[add section] : Materials");
            chat.insert("OutlineRefinement", "$echo:outline");
        }
        chat
    }

    fn loop_search() -> MockSearchProvider {
        MockSearchProvider::from_fixtures(&[
            ("Kite", hits("kite", 3)),
            ("q history", hits("hist", 3)),
            ("q design", hits("design", 3)),
        ])
    }

    #[tokio::test]
    async fn loop_converges_on_iteration_one_with_preloaded_attributes() {
        let gw = gateway(loop_chat(true), loop_search());
        let config = DiscoveryConfig {
            preloaded_attributes: vec!["history".into(), "design".into()],
            ..DiscoveryConfig::default()
        };
        let outcome = discovery_loop(&gw, None, "Kite", &config).await.unwrap();
        assert_eq!(outcome.report.iterations.len(), 1);
        assert!(outcome.report.converged);
        assert_eq!(outcome.report.stop_reason, Some(StopReason::Converged));
        // All-DoNothing ops with an echoing refinement keep the outline.
        assert_eq!(render_outline(&outcome.outline), "# History\n# Design");
    }

    #[tokio::test]
    async fn loop_never_converging_stops_at_iteration_cap() {
        let gw = gateway(loop_chat(false), loop_search());
        let config = DiscoveryConfig::default();
        let outcome = discovery_loop(&gw, None, "Kite", &config).await.unwrap();
        assert_eq!(outcome.report.iterations.len(), 2);
        assert!(!outcome.report.converged);
        assert_eq!(outcome.report.stop_reason, Some(StopReason::IterationCap));
        // The add operation landed via the echoing refinement.
        assert!(outcome.outline.contains_normalized("materials"));
    }

    #[tokio::test]
    async fn loop_attribute_buffer_grows_monotonically() {
        let gw = gateway(loop_chat(false), loop_search());
        let config = DiscoveryConfig::default();
        let outcome = discovery_loop(&gw, None, "Kite", &config).await.unwrap();
        let sizes: Vec<usize> = outcome
            .report
            .iterations
            .iter()
            .map(|i| i.buffer_size)
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    }

    #[tokio::test]
    async fn loop_fatal_error_carries_partial_report() {
        // Attribute extraction succeeds, query generation yields nothing.
        let mut chat = MockChatProvider::default();
        chat.insert("TopicSummarization", "Brief.");
        chat.insert("RagOutlineGeneration", "# A");
        chat.insert("AttributesExtraction", "alpha");
        chat.insert("AttributesToQueries", "nothing parseable");
        let gw = gateway(chat, loop_search());
        let failure = discovery_loop(&gw, None, "Kite", &DiscoveryConfig::default())
            .await
            .unwrap_err();
        assert!(matches!(failure.error, DiscoveryError::NoQueries));
        assert_eq!(failure.report.stop_reason, Some(StopReason::Aborted));
        assert_eq!(failure.report.initial_outline, "# A");
    }
}
