//! Acceptance suite. Each test implements one acceptance criterion at its
//! stated tolerance and prints one pass line; run with `--nocapture` to see
//! the lines alongside the per-test verdicts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use longform::corpus::{ingest_corpus, CorpusRecord};
use longform::discovery::{discovery_loop, DiscoveryConfig, ReferenceStore};
use longform::evalkit::{f1_at_k, outline_f1, FactualityInput};
use longform::gateway::mock::{MockChatProvider, MockEmbedProvider, MockSearchProvider};
use longform::gateway::{host_is_excluded, Gateway, GatewayConfig, RetryPolicy, SearchResult};
use longform::outline::{normalize_title, Outline, SectionNode};
use longform::planner::{
    chain_plan, generate_plan, parse_plan, plan_metrics, topological_schedule, PlanOrigin,
    WritingPlan,
};
use longform::writer::{
    generate_article, renumber_citations, section_references, Citation, SectionDraft, WriterConfig,
};
use longform::{run_pipeline, PipelineConfig};

use longform_cli::{run, Cli, Command};

const TOPIC: &str = "Great Barrier Reef";

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn demo_gateway() -> Gateway {
    let dir = fixtures_dir();
    Gateway::new(
        Arc::new(MockChatProvider::from_dir(&dir).expect("chat fixtures")),
        Arc::new(MockSearchProvider::from_dir(&dir).expect("search fixtures")),
        Arc::new(MockEmbedProvider::default()),
        GatewayConfig {
            retry: RetryPolicy {
                attempts: 3,
                base_delay_ms: 10,
            },
            ..GatewayConfig::default()
        },
    )
}

fn demo_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        discovery: DiscoveryConfig {
            exemplar_n: 2,
            max_iterations: 1,
            ..DiscoveryConfig::default()
        },
        writer: WriterConfig {
            section_ref_k: 4,
            ..WriterConfig::default()
        },
    }
}

fn generate_into(out_dir: &Path) -> i32 {
    run(Cli {
        command: Command::Generate {
            topic: TOPIC.to_string(),
            config: Some(fixtures_dir().join("config.toml")),
            mock_fixtures: None,
            out: Some(out_dir.to_path_buf()),
        },
    })
}

/// The commands build their own runtime, so inside async tests they must
/// run on a blocking thread.
async fn generate_into_async(out_dir: PathBuf) -> i32 {
    tokio::task::spawn_blocking(move || generate_into(&out_dir))
        .await
        .expect("generate task")
}

fn level_one_headings(markdown: &str) -> Vec<String> {
    markdown
        .lines()
        .filter_map(|line| line.strip_prefix("# "))
        .map(|t| t.trim().to_string())
        .collect()
}

// Criterion 1: the shipped mock fixture suite generates a full article in
// under ten seconds, exits zero, and the article contains every first-level
// section of the final outline exactly once, in outline order.
#[test]
fn acceptance_01_hermetic_end_to_end() {
    let out = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let code = generate_into(out.path());
    let elapsed = started.elapsed();
    assert_eq!(code, 0, "generate must exit 0");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");

    let markdown = std::fs::read_to_string(out.path().join("great-barrier-reef.md")).unwrap();
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("great-barrier-reef.sidecar.json")).unwrap())
            .unwrap();
    let expected: Vec<String> = sidecar["first_level_sections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let headings = level_one_headings(&markdown);
    assert_eq!(headings, expected, "sections must appear exactly once, in outline order");
    for name in ["md", "sidecar.json", "report.json", "plan.json", "cost.json"] {
        assert!(
            out.path().join(format!("great-barrier-reef.{name}")).exists(),
            "missing output file .{name}"
        );
    }
    println!("PASS criterion 1: hermetic generate in {elapsed:?}, exit 0, sections in order");
}

// Criterion 2: two hermetic runs are byte-identical (article markdown and
// sidecar JSON), including under adversarial completion-order shuffling of
// the search fan-out.
#[tokio::test]
async fn acceptance_02_determinism() {
    // CLI level: identical invocations.
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    assert_eq!(generate_into_async(out_a.path().to_path_buf()).await, 0);
    assert_eq!(generate_into_async(out_b.path().to_path_buf()).await, 0);
    for name in ["great-barrier-reef.md", "great-barrier-reef.sidecar.json"] {
        let a = std::fs::read(out_a.path().join(name)).unwrap();
        let b = std::fs::read(out_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // Library level: seeded artificial latencies shuffle which search
    // completes first; committed output must not change.
    let mut artifacts = Vec::new();
    for seed in [3u64, 31337u64] {
        let dir = fixtures_dir();
        let gateway = Gateway::new(
            Arc::new(MockChatProvider::from_dir(&dir).unwrap()),
            Arc::new(MockSearchProvider::from_dir(&dir).unwrap().with_latency_seed(seed)),
            Arc::new(MockEmbedProvider::default()),
            GatewayConfig::default(),
        );
        let output = run_pipeline(&gateway, None, TOPIC, &demo_pipeline_config())
            .await
            .unwrap();
        artifacts.push((
            output.markdown,
            serde_json::to_string_pretty(&output.sidecar).unwrap(),
        ));
    }
    assert_eq!(artifacts[0], artifacts[1], "adversarial scheduling changed the output");
    println!("PASS criterion 2: byte-identical runs, with and without latency shuffling");
}

// Criterion 3: every schedule over 1000 random DAGs (<= 12 nodes) places
// each edge's source in a strictly earlier wave, verified by brute force;
// cyclic plan replies always fall back to the single-wave parallel plan.
#[tokio::test]
async fn acceptance_03_plan_soundness() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let nodes: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        let mut edges = Vec::new();
        for to in 0..n {
            for from in 0..to {
                if rng.random_bool(0.35) {
                    edges.push((from, to));
                }
            }
        }
        let plan = WritingPlan {
            nodes,
            edges: edges.clone(),
            origin: PlanOrigin::Llm,
        };
        let schedule = topological_schedule(&plan, 3).expect("random DAG schedules");
        let mut wave_of: HashMap<&str, usize> = HashMap::new();
        for (w, wave) in schedule.waves.iter().enumerate() {
            for title in wave {
                wave_of.insert(title.as_str(), w);
            }
        }
        assert_eq!(wave_of.len(), plan.nodes.len(), "case {case}: node lost");
        for (from, to) in &edges {
            let u = wave_of[plan.nodes[*from].as_str()];
            let v = wave_of[plan.nodes[*to].as_str()];
            assert!(u < v, "case {case}: edge ({from},{to}) waves {u},{v}");
        }
    }

    // Cyclic LLM replies of every small cycle length fall back.
    for cycle_len in 2..=6 {
        let sections: Vec<String> = (0..cycle_len).map(|i| format!("S{i}")).collect();
        let reply: String = (0..cycle_len)
            .map(|i| format!("S{i} <- S{}", (i + 1) % cycle_len))
            .collect::<Vec<_>>()
            .join("\n");
        let gateway = Gateway::new(
            Arc::new(MockChatProvider::from_pairs(&[("PlanGeneration", reply.as_str())])),
            Arc::new(MockSearchProvider::default()),
            Arc::new(MockEmbedProvider::default()),
            GatewayConfig::default(),
        );
        let outline_text: String = sections
            .iter()
            .map(|s| format!("# {s}"))
            .collect::<Vec<_>>()
            .join("\n");
        let outline = longform::outline::parse_outline(&outline_text).unwrap();
        let (plan, _, _) = generate_plan(&gateway, "T", &outline).await.unwrap();
        assert_eq!(plan.origin, PlanOrigin::FallbackParallel);
        assert!(plan.edges.is_empty());
        let schedule = topological_schedule(&plan, 3).unwrap();
        assert_eq!(schedule.waves.len(), 1, "fallback must schedule one wave");
    }
    println!("PASS criterion 3: 1000 random schedules sound; cycles fall back to one wave");
}

/// A full nested outline whose eleven first-level sections match the
/// case-study plan nodes.
const CASE_STUDY_OUTLINE: &str = "\
# Background
# Development
## Origin of the project
## Collaboration with scientific communities
# Algorithm
## Neural network architecture
## Training datasets
## AlphaFold 1
## AlphaFold 2
## Updates and enhancements in AlphaFold 3
## AlphaFold 3 Pairformer and advancements
# Protein Structure Predictions
## Methodology
## Accuracy and reliability
## Comparison with experimental methods
# Competitions and Benchmarks
## CASP12
## CASP13
## CASP14
## CASP15
# Applications
## Drug discovery
## Enzyme engineering
## Understanding diseases
## Environmental research
## Synthetic biology
## Role in antibody characterization
## Use of AlphaFold in predicting genetic mutation impacts
# Database
## AlphaFold Protein Structure Database
## Accessibility and usage
## Global impact on research
# Source Code and Open Access
## Release of AlphaFold source code
## Community contributions and forks
# Limitations
## Known issues
## Challenges in complex protein assemblies
## Limitations with membrane proteins and disordered regions
## Limitations in predicting intrinsically disordered regions
# Reception and Impact
## Scientific community
## General public
## Ethical considerations
# Future Directions
## Enhancements in accuracy
## Integration with other biological tools
## Expansion to other molecular complexes";

/// Eleven sections and twelve dependencies in the colon line grammar.
fn case_study_plan() -> WritingPlan {
    let sections: Vec<String> = [
        "Background",
        "Development",
        "Algorithm",
        "Protein Structure Predictions",
        "Competitions and Benchmarks",
        "Applications",
        "Database",
        "Source Code and Open Access",
        "Limitations",
        "Reception and Impact",
        "Future Directions",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let reply = "\
Background: Development
Development: Algorithm
Algorithm: Protein Structure Predictions, Competitions and Benchmarks, Limitations
Protein Structure Predictions: Applications, Limitations
Competitions and Benchmarks: None
Applications: Database, Reception and Impact
Database: Source Code and Open Access
Source Code and Open Access: None
Limitations: Reception and Impact
Reception and Impact: Future Directions
Future Directions: None";
    let parsed = parse_plan(reply, &sections).expect("case-study plan parses");
    WritingPlan {
        nodes: sections,
        edges: parsed.edges,
        origin: PlanOrigin::Llm,
    }
}

/// Exhaustive enumeration of every directed path, counting edges.
fn longest_path_by_enumeration(plan: &WritingPlan) -> usize {
    fn dfs(node: usize, out: &Vec<Vec<usize>>) -> usize {
        out[node]
            .iter()
            .map(|&next| 1 + dfs(next, out))
            .max()
            .unwrap_or(0)
    }
    let mut out = vec![Vec::new(); plan.nodes.len()];
    for (from, to) in &plan.edges {
        out[*from].push(*to);
    }
    (0..plan.nodes.len())
        .map(|start| dfs(start, &out))
        .max()
        .unwrap_or(0)
}

// Criterion 4: density(chain_n) == 1.0 exactly for n in 2..=10, and the
// case-study plan yields nodes=11, edges=12, density=1.2, longest path 6,
// all checked against exhaustive path enumeration.
#[test]
fn acceptance_04_graph_metrics_exactness() {
    for n in 2..=10 {
        let plan = chain_plan((0..n).map(|i| format!("S{i}")).collect());
        let metrics = plan_metrics(&plan).unwrap();
        assert_eq!(metrics.dependency_density, 1.0, "chain of {n}");
        assert_eq!(metrics.longest_path, longest_path_by_enumeration(&plan));
    }

    let plan = case_study_plan();
    let metrics = plan_metrics(&plan).unwrap();
    assert_eq!(metrics.node_count, 11);
    assert_eq!(metrics.edge_count, 12);
    assert_eq!(metrics.dependency_density, 1.2);
    assert_eq!(metrics.longest_path, 6);
    assert_eq!(longest_path_by_enumeration(&plan), 6);
    let schedule = topological_schedule(&plan, 3).unwrap();
    assert_eq!(schedule.waves[0], vec!["Background".to_string()]);
    // Every node's dependencies land in strictly earlier waves.
    let mut wave_of: HashMap<&str, usize> = HashMap::new();
    for (w, wave) in schedule.waves.iter().enumerate() {
        for title in wave {
            wave_of.insert(title.as_str(), w);
        }
    }
    for (from, to) in &plan.edges {
        assert!(wave_of[plan.nodes[*from].as_str()] < wave_of[plan.nodes[*to].as_str()]);
    }

    // The case-study outline parses to exactly these eleven level-1
    // sections, in the same order as the plan nodes.
    let case_outline = longform::outline::parse_outline(CASE_STUDY_OUTLINE).unwrap();
    assert_eq!(
        longform::outline::first_level_sections(&case_outline),
        plan.nodes
    );
    println!("PASS criterion 4: chain densities exact; case-study plan 11/12/1.2/6");
}

// Criterion 5: outline_f1 equals a brute-force multiset-intersection oracle
// on 1000 random title multisets, to within 1e-12.
#[test]
fn acceptance_05_outline_f1_oracle_equivalence() {
    fn chain_outline(titles: &[String]) -> Outline {
        let mut node: Option<SectionNode> = None;
        for (depth, title) in titles.iter().enumerate().rev() {
            let mut current = SectionNode::new(title.clone(), depth + 1);
            if let Some(child) = node.take() {
                current.children.push(child);
            }
            node = Some(current);
        }
        Outline {
            roots: vec![node.expect("nonempty title list")],
        }
    }

    fn counts(titles: &[String]) -> HashMap<String, usize> {
        let mut map = HashMap::new();
        for t in titles {
            *map.entry(normalize_title(t)).or_insert(0) += 1;
        }
        map
    }

    let decorations = ["", "  ", "## ", "2. "];
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    for case in 0..1000 {
        let pool_size = rng.random_range(2..=8);
        let make = |rng: &mut StdRng| -> Vec<String> {
            let len = rng.random_range(1..=12);
            (0..len)
                .map(|_| {
                    let word = format!("w{}", rng.random_range(0..pool_size));
                    let dec = decorations[rng.random_range(0..decorations.len())];
                    format!("{dec}{word}")
                })
                .collect()
        };
        let generated_titles = make(&mut rng);
        let gold_titles = make(&mut rng);
        let generated = chain_outline(&generated_titles);
        let gold = chain_outline(&gold_titles);
        let score = outline_f1(&generated, &gold).unwrap();

        // Independent brute-force oracle over normalized counts.
        let g = counts(&generated_titles);
        let h = counts(&gold_titles);
        let matched: usize = g
            .iter()
            .map(|(k, c)| c.min(h.get(k).unwrap_or(&0)))
            .sum();
        let recall = matched as f64 / gold_titles.len() as f64;
        let precision = matched as f64 / generated_titles.len() as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        assert!((score.recall - recall).abs() < 1e-12, "case {case} recall");
        assert!((score.precision - precision).abs() < 1e-12, "case {case} precision");
        assert!((score.f1 - f1).abs() < 1e-12, "case {case} f1");
        assert_eq!(score.matched.len(), matched, "case {case} match count");
    }
    println!("PASS criterion 5: 1000 random multisets match the brute-force oracle");
}

// Criterion 6: F1@K saturation, the two derived formula points, and
// monotonicity in supported_count over a 100-point sweep.
#[test]
fn acceptance_06_f1_at_k() {
    assert_eq!(f1_at_k(&FactualityInput::new(1.0, 300, 300), 300), 1.0);
    assert_eq!(f1_at_k(&FactualityInput::new(1.0, 1000, 800), 300), 1.0);
    assert!((f1_at_k(&FactualityInput::new(0.5, 200, 150), 300) - 0.5).abs() < 1e-12);
    assert!((f1_at_k(&FactualityInput::new(0.6, 1000, 600), 300) - 0.75).abs() < 1e-12);

    let mut last = -1.0;
    for step in 0..100 {
        let supported = step * 5;
        let value = f1_at_k(&FactualityInput::new(0.8, 500, supported), 300);
        assert!(value + 1e-15 >= last, "supported={supported}");
        last = value;
    }
    println!("PASS criterion 6: saturation, formula points, and 100-point monotone sweep");
}

// Criterion 7: the hermetic pipeline with one refinement iteration and m
// sections performs exactly 8+m chat completions, and the cost report
// totals equal the gateway counter.
#[tokio::test]
async fn acceptance_07_call_budget() {
    let gateway = demo_gateway();
    let output = run_pipeline(&gateway, None, TOPIC, &demo_pipeline_config())
        .await
        .unwrap();
    let m = output.article.sections.len() as u64;
    assert_eq!(output.discovery_report.iterations.len(), 1, "one refinement iteration");
    assert_eq!(gateway.counter().chat_calls(), 8 + m);
    assert_eq!(output.cost.llm_calls, 8 + m);
    let per_template: u64 = output.cost.per_template_calls.values().sum();
    assert_eq!(per_template, 8 + m);

    // The persisted cost report agrees with the in-process counter.
    let out = tempfile::tempdir().unwrap();
    assert_eq!(generate_into_async(out.path().to_path_buf()).await, 0);
    let cost: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("great-barrier-reef.cost.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cost["llm_calls"].as_u64().unwrap(), 8 + m);
    println!("PASS criterion 7: exactly 8+m = {} chat completions, cost report agrees", 8 + m);
}

// Criterion 8: with artificial mock latencies, instrumented peak concurrent
// section generations never exceeds 3 under the default configuration.
#[tokio::test]
async fn acceptance_08_concurrency_bound() {
    let titles = ["A", "B", "C", "D", "E", "F"];
    let mut chat = MockChatProvider::default();
    for t in titles {
        chat.insert_delayed(
            &format!("SectionWriting::{t}"),
            &format!("# {t}\n\nBody cites [1]."),
            30,
        );
    }
    let gateway = Gateway::new(
        Arc::new(chat),
        Arc::new(MockSearchProvider::default()),
        Arc::new(MockEmbedProvider::default()),
        GatewayConfig::default(),
    );
    let outline_text: String = titles
        .iter()
        .map(|t| format!("# {t}"))
        .collect::<Vec<_>>()
        .join("\n");
    let outline = longform::outline::parse_outline(&outline_text).unwrap();
    let plan = WritingPlan::fallback(titles.iter().map(|s| s.to_string()).collect());
    let mut store = ReferenceStore::default();
    store.insert(SearchResult {
        title: "ref".into(),
        url: "https://r.org".into(),
        snippet: "shared reference".into(),
        rank: 1,
        source_query: "q".into(),
    });
    let outcome = generate_article(
        &gateway,
        "T",
        &outline,
        &plan,
        &store,
        &WriterConfig::default(),
    )
    .await
    .unwrap();
    assert!(
        outcome.stats.peak_concurrency <= 3,
        "peak {} exceeds the cap",
        outcome.stats.peak_concurrency
    );
    assert!(
        outcome.stats.peak_concurrency >= 2,
        "latencies should overlap at least two sections"
    );
    println!(
        "PASS criterion 8: peak concurrent section generations = {} <= 3",
        outcome.stats.peak_concurrency
    );
}

// Criterion 9: on 500 random multi-section citation fixtures, renumbering
// preserves every (marker, URL) pair, produces dense global ids in first
// appearance order, and is idempotent.
#[test]
fn acceptance_09_citation_integrity() {
    fn marker_urls(draft: &SectionDraft) -> Vec<String> {
        let by_marker: HashMap<usize, &Citation> =
            draft.citations.iter().map(|c| (c.marker, c)).collect();
        let mut urls = Vec::new();
        let mut rest = draft.body.as_str();
        while let Some(open) = rest.find('[') {
            rest = &rest[open + 1..];
            if let Some(close) = rest.find(']') {
                let inner = &rest[..close];
                if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_digit()) {
                    if let Some(c) = by_marker.get(&inner.parse::<usize>().unwrap()) {
                        urls.push(c.url.clone());
                    }
                }
                rest = &rest[close + 1..];
            } else {
                break;
            }
        }
        urls
    }

    let mut rng = StdRng::seed_from_u64(0x5eed_0009);
    for case in 0..500 {
        let url_pool: Vec<String> = (0..6).map(|i| format!("https://u{i}.org")).collect();
        let section_count = rng.random_range(1..=5);
        let mut drafts = Vec::new();
        for s in 0..section_count {
            let local_refs = rng.random_range(0..=4usize);
            let local_urls: Vec<&String> = (0..local_refs)
                .map(|_| &url_pool[rng.random_range(0..url_pool.len())])
                .collect();
            let mut body = format!("# Section {s}\n");
            for w in 0..rng.random_range(1..=12) {
                if local_refs > 0 && rng.random_bool(0.4) {
                    body.push_str(&format!("[{}] ", rng.random_range(1..=local_refs)));
                } else {
                    body.push_str(&format!("word{w} "));
                }
            }
            // Citation map derived from the markers actually present.
            let mut markers: Vec<usize> = Vec::new();
            for token in body.split(['[', ']']) {
                if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
                    let v = token.parse().unwrap();
                    if !markers.contains(&v) {
                        markers.push(v);
                    }
                }
            }
            let citations = markers
                .iter()
                .map(|&m| Citation {
                    marker: m,
                    ref_id: m,
                    url: local_urls[m - 1].clone(),
                    title: format!("title {}", local_urls[m - 1]),
                })
                .collect();
            drafts.push(SectionDraft {
                title: format!("Section {s}"),
                body,
                citations,
                used_dependencies: Vec::new(),
                warnings: Vec::new(),
                placeholder: false,
            });
        }

        let before: Vec<Vec<String>> = drafts.iter().map(marker_urls).collect();
        let expected_order: Vec<String> = {
            let mut seen = Vec::new();
            for urls in &before {
                for url in urls {
                    if !seen.contains(url) {
                        seen.push(url.clone());
                    }
                }
            }
            seen
        };

        let article = renumber_citations("T", drafts);
        let after: Vec<Vec<String>> = article.sections.iter().map(marker_urls).collect();
        assert_eq!(before, after, "case {case}: (marker, URL) pairs not preserved");

        let ids: Vec<usize> = article.bibliography.iter().map(|b| b.id).collect();
        assert_eq!(ids, (1..=article.bibliography.len()).collect::<Vec<_>>(), "case {case}: ids not dense");
        let bib_urls: Vec<String> = article.bibliography.iter().map(|b| b.url.clone()).collect();
        assert_eq!(bib_urls, expected_order, "case {case}: first-appearance order");

        let again = renumber_citations("T", article.sections.clone());
        assert_eq!(again.sections, article.sections, "case {case}: not idempotent");
        assert_eq!(again.bibliography, article.bibliography, "case {case}: bibliography drifted");
    }
    println!("PASS criterion 9: 500 random citation fixtures preserved, dense, idempotent");
}

// Criterion 10: exemplar retrieval and section-reference retrieval match an
// independent exhaustive cosine scan on 10k-entry corpora/stores.
#[tokio::test]
async fn acceptance_10_retrieval_oracle_equivalence() {
    fn oracle_cosine(a: &longform::gateway::EmbeddingVector, b: &longform::gateway::EmbeddingVector) -> f64 {
        let dot: f64 = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| *x as f64 * *y as f64)
            .sum();
        let na: f64 = a.values.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.values.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    let words = [
        "reef", "coral", "desert", "glacier", "river", "volcano", "forest", "island", "prairie",
        "canyon",
    ];
    let embedder = MockEmbedProvider { dimension: 128 };
    let gateway = Gateway::new(
        Arc::new(MockChatProvider::default()),
        Arc::new(MockSearchProvider::default()),
        Arc::new(embedder.clone()),
        GatewayConfig::default(),
    );

    // 10k-exemplar corpus.
    let records: Vec<CorpusRecord> = (0..10_000)
        .map(|i| CorpusRecord {
            id: i.to_string(),
            title: format!("{} {} study {}", words[i % 10], words[(i / 10) % 10], i),
            outline_text: "# Overview\n# Details".to_string(),
            summary: Some(format!("{} field notes", words[(i / 100) % 10])),
        })
        .collect();
    let (index, _) = ingest_corpus(&gateway, records, None, None).await.unwrap();
    let topic = "coral reef dynamics";
    let brief = "reef systems and coral habitats";
    let got = index.retrieve_exemplars(&gateway, topic, brief, 5).await.unwrap();

    let query_vec = embedder.embed_one(&format!("{topic} {brief}"));
    let mut oracle: Vec<(usize, f64)> = index
        .exemplars
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let text = format!("{} {}", ex.topic, ex.summary.as_deref().unwrap_or(""));
            (i, oracle_cosine(&query_vec, &embedder.embed_one(text.trim())))
        })
        .collect();
    oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let expected: Vec<String> = oracle
        .iter()
        .take(5)
        .map(|(i, _)| index.exemplars[*i].topic.clone())
        .collect();
    let actual: Vec<String> = got.iter().map(|(t, _)| t.clone()).collect();
    assert_eq!(actual, expected, "exemplar retrieval diverged from the scan oracle");

    // 10k-entry reference store.
    let mut store = ReferenceStore::default();
    for i in 0..10_000usize {
        store.insert(SearchResult {
            title: format!("{} {} report {}", words[i % 10], words[(i / 7) % 10], i),
            url: format!("https://site{i}.org"),
            snippet: format!("{} observations", words[(i / 13) % 10]),
            rank: 1,
            source_query: "q".into(),
        });
    }
    let mut section = SectionNode::new("Coral Reef Overview", 1);
    section.children.push(SectionNode::new("Island Habitats", 2));
    let got = section_references(&gateway, &section, &store, 10).await.unwrap();

    let query_vec = embedder.embed_one("Coral Reef Overview Island Habitats");
    let mut oracle: Vec<(usize, f64)> = store
        .iter()
        .map(|(id, r)| {
            (
                id,
                oracle_cosine(&query_vec, &embedder.embed_one(&format!("{} {}", r.title, r.snippet))),
            )
        })
        .collect();
    oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let expected: Vec<usize> = oracle.iter().take(10).map(|(id, _)| *id).collect();
    let actual: Vec<usize> = got.iter().map(|r| r.id).collect();
    assert_eq!(actual, expected, "section-reference retrieval diverged from the scan oracle");
    println!("PASS criterion 10: 10k-entry retrievals equal the exhaustive cosine scans");
}

// Criterion 11: no excluded host ever enters the reference store, and no
// query contributes more than k=5 results.
#[tokio::test]
async fn acceptance_11_search_hygiene() {
    // The raw fixtures really do contain excluded hosts.
    let raw = std::fs::read_to_string(fixtures_dir().join("search.jsonl")).unwrap();
    assert!(raw.contains("wikipedia.org"), "fixture must exercise the exclusion");

    let gateway = demo_gateway();
    let config = demo_pipeline_config();
    let outcome = discovery_loop(&gateway, None, TOPIC, &config.discovery)
        .await
        .expect("discovery succeeds");
    let excluded = ["*.wikipedia.org".to_string()];
    assert!(!outcome.store.is_empty());
    let mut per_query: HashMap<&str, usize> = HashMap::new();
    for (_, reference) in outcome.store.iter() {
        assert!(
            !host_is_excluded(&reference.url, &excluded),
            "excluded host in store: {}",
            reference.url
        );
        *per_query.entry(reference.source_query.as_str()).or_insert(0) += 1;
        assert!(reference.rank >= 1 && reference.rank <= 5, "rank out of range");
    }
    for (query, count) in &per_query {
        assert!(*count <= 5, "query {query} contributed {count} > 5 results");
    }
    println!(
        "PASS criterion 11: {} references, no excluded hosts, per-query counts <= 5",
        outcome.store.len()
    );
}
